use std::path::Path;

use crate::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_bleu4,wall_seconds";

/// One line of the metrics file. Epochs are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_bleu4: f64,
    pub wall_seconds: f64,
}

/// Values use Rust's shortest round-trip formatting, so reading the file
/// back gives bit-identical numbers.
pub fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_bleu4, r.wall_seconds
        ));
    }
    out
}

pub fn write_metrics(path: &Path, rows: &[EpochRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn parse_metrics(text: &str, source: &str) -> Result<Vec<EpochRow>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_owned(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(err(1, format!("expected header {METRICS_HEADER:?}"))),
    }
    let mut rows: Vec<EpochRow> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(err(i + 1, format!("expected 5 fields, found {}", f.len())));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse()
                .map_err(|_| err(i + 1, format!("field {k} ({:?}) is not a number", f[k])))
        };
        let epoch: usize = f[0]
            .parse()
            .map_err(|_| err(i + 1, format!("epoch {:?} is not an integer", f[0])))?;
        if epoch != rows.len() + 1 {
            return Err(err(i + 1, format!("epoch {epoch} out of sequence")));
        }
        rows.push(EpochRow {
            epoch,
            train_loss: num(1)?,
            val_loss: num(2)?,
            val_bleu4: num(3)?,
            wall_seconds: num(4)?,
        });
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text, &path.display().to_string())
}
