use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ClassSplitDataset;
use crate::error::{Error, Result};
use crate::eval::metrics::{mean, std_dev};
use crate::eval::{CaptionCount, TestEmbeddings};
use crate::joint::CompatibilityModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Captions per training image; one model per cell.
    Train,
    /// Captions per class at test time; one model for all cells.
    Test,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Train => "train",
            SweepAxis::Test => "test",
        })
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SweepAxis::Train),
            "test" => Ok(SweepAxis::Test),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}`"))),
        }
    }
}

/// One (count, repeat) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub count: CaptionCount,
    pub repeat: usize,
    pub top1: f64,
    pub ap50: f64,
}

/// Mean and sample standard deviation over the repeats of one count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub count: CaptionCount,
    pub repeats: usize,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub ap50_mean: f64,
    pub ap50_std: f64,
}

/// Varies the number of test captions per class for one trained model.
/// Repeat `r` samples with seed `seed + r`.
pub fn caption_sweep_test(
    model: &CompatibilityModel,
    ds: &ClassSplitDataset,
    counts: &[CaptionCount],
    repeats: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let emb = TestEmbeddings::new(model, ds)?;
    let mut rows = Vec::with_capacity(counts.len() * repeats);
    for &count in counts {
        for r in 0..repeats {
            let (_, top1, ap) = emb.evaluate(count, seed + r as u64)?;
            rows.push(SweepRow {
                axis: SweepAxis::Test,
                count,
                repeat: r,
                top1: mean(&top1),
                ap50: mean(&ap),
            });
        }
    }
    Ok(rows)
}

/// Retrains with the first `count` captions of every image and evaluates
/// each model with all test captions. `train` receives the truncated
/// dataset and the repeat seed `seed + r`.
pub fn caption_sweep_train<F>(
    ds: &ClassSplitDataset,
    counts: &[CaptionCount],
    repeats: usize,
    seed: u64,
    mut train: F,
) -> Result<Vec<SweepRow>>
where
    F: FnMut(&ClassSplitDataset, u64) -> Result<CompatibilityModel>,
{
    let mut rows = Vec::with_capacity(counts.len() * repeats);
    for &count in counts {
        let truncated = match count {
            CaptionCount::N(n) => Some(ds.with_captions_per_image(n)?),
            CaptionCount::All => None,
        };
        for r in 0..repeats {
            let s = seed + r as u64;
            let model = train(truncated.as_ref().unwrap_or(ds), s)?;
            let emb = TestEmbeddings::new(&model, ds)?;
            let (_, top1, ap) = emb.evaluate(CaptionCount::All, s)?;
            log::info!("train sweep count {count} repeat {r}: top1 {:.2}", mean(&top1));
            rows.push(SweepRow {
                axis: SweepAxis::Train,
                count,
                repeat: r,
                top1: mean(&top1),
                ap50: mean(&ap),
            });
        }
    }
    Ok(rows)
}

/// Groups rows by (axis, count), in ascending count order with `all` last.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut groups: BTreeMap<(SweepAxis, CaptionCount), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.axis, r.count)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((axis, count), rs)| {
            let top1: Vec<f64> = rs.iter().map(|r| r.top1).collect();
            let ap: Vec<f64> = rs.iter().map(|r| r.ap50).collect();
            SweepSummary {
                axis,
                count,
                repeats: rs.len(),
                top1_mean: mean(&top1),
                top1_std: std_dev(&top1),
                ap50_mean: mean(&ap),
                ap50_std: std_dev(&ap),
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    axis: SweepAxis,
    count: String,
    repeat: usize,
    top1: f64,
    ap50: f64,
}

/// CSV with header `axis,count,repeat,top1,ap50`.
pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(CsvRow {
            axis: r.axis,
            count: r.count.to_string(),
            repeat: r.repeat,
            top1: r.top1,
            ap50: r.ap50,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(SweepRow {
                axis: row.axis,
                count: row.count.parse()?,
                repeat: row.repeat,
                top1: row.top1,
                ap50: row.ap50,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(count: CaptionCount, repeat: usize, top1: f64) -> SweepRow {
        SweepRow {
            axis: SweepAxis::Test,
            count,
            repeat,
            top1,
            ap50: top1 / 2.0,
        }
    }

    #[test]
    fn summary_orders_all_last() {
        let rows = vec![
            row(CaptionCount::All, 0, 80.0),
            row(CaptionCount::N(2), 0, 50.0),
            row(CaptionCount::N(2), 1, 70.0),
            row(CaptionCount::N(10), 0, 75.0),
        ];
        let s = summarize(&rows);
        let counts: Vec<_> = s.iter().map(|x| x.count).collect();
        assert_eq!(counts, vec![CaptionCount::N(2), CaptionCount::N(10), CaptionCount::All]);
        assert_eq!(s[0].top1_mean, 60.0);
        assert!((s[0].top1_std - 200f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[2].top1_std, 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let rows = vec![row(CaptionCount::N(1), 0, 12.5), row(CaptionCount::All, 3, 99.0)];
        write_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("axis,count,repeat,top1,ap50\n"));
        assert!(text.contains("test,all,3,99.0,49.5"));
        assert_eq!(read_csv(&path).unwrap(), rows);
    }
}
