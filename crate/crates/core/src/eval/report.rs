use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassId, Level};
use crate::encoders::Family;
use crate::error::{Error, Result};
use crate::eval::CaptionCount;
use crate::joint::Objective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub class: ClassId,
    pub images: usize,
    pub captions_used: usize,
    /// Percent of this class's test images classified correctly.
    pub top1: f64,
    /// Percent of the top `effective_k` images that belong to this class.
    pub ap_at_k: f64,
}

/// Headline metrics, their per-class breakdown, and the settings behind them.
/// Headlines are unweighted means of the per-class values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub objective: Option<Objective>,
    pub encoder: Family,
    pub level: Level,
    pub captions: CaptionCount,
    pub seed: u64,
    pub top1: f64,
    pub ap_at_50: f64,
    pub effective_k: usize,
    pub per_class: Vec<ClassRecord>,
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let objective = self.objective.map_or("-".to_string(), |o| o.to_string());
        writeln!(
            out,
            "objective {objective}  encoder {} ({})  captions/class {}  seed {}",
            self.encoder, self.level, self.captions, self.seed
        )
        .expect("string write");
        writeln!(out, "{:>8} {:>7} {:>9} {:>9} {:>9}", "class", "images", "captions", "top1 %", format!("ap@{} %", self.effective_k))
            .expect("string write");
        for r in &self.per_class {
            writeln!(
                out,
                "{:>8} {:>7} {:>9} {:>9.2} {:>9.2}",
                r.class, r.images, r.captions_used, r.top1, r.ap_at_k
            )
            .expect("string write");
        }
        writeln!(out, "{:>8} {:>7} {:>9} {:>9.2} {:>9.2}", "mean", "", "", self.top1, self.ap_at_50)
            .expect("string write");
        out
    }

    /// Writes `<stem>.txt` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.to_table()).map_err(|e| Error::io(&txt, e))?;
        let json = dir.join(format!("{stem}.json"));
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(&json, body + "\n").map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        EvalReport {
            objective: Some(Objective::DsSje),
            encoder: Family::CnnRnn,
            level: Level::Word,
            captions: CaptionCount::N(4),
            seed: 3,
            top1: 62.5,
            ap_at_50: 40.0,
            effective_k: 20,
            per_class: vec![
                ClassRecord {
                    class: 7,
                    images: 10,
                    captions_used: 4,
                    top1: 100.0,
                    ap_at_k: 50.0,
                },
                ClassRecord {
                    class: 8,
                    images: 10,
                    captions_used: 4,
                    top1: 25.0,
                    ap_at_k: 30.0,
                },
            ],
        }
    }

    #[test]
    fn save_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        r.save(dir.path(), "report").unwrap();
        assert_eq!(EvalReport::load(&dir.path().join("report.json")).unwrap(), r);
        let table = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(table.contains("ap@20"));
        assert_eq!(table.lines().count(), 5);
    }
}
