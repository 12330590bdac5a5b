//! Result grid and its markdown, LaTeX and CSV renderings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Arch;

/// Aggregated runs of one (encoder, arch) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CellStats {
    /// Mean test accuracy as a fraction.
    pub mean: f64,
    /// Population standard deviation, as a fraction.
    pub std: f64,
    pub seeds: Vec<u64>,
    pub epochs_ran: Vec<usize>,
    pub test_accs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub encoder: String,
    pub arch: Arch,
    pub outcome: std::result::Result<CellStats, String>,
}

/// Rows are encoders, columns architectures, both in config order.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub encoders: Vec<String>,
    pub archs: Vec<Arch>,
    /// Row-major: `cells[e * archs.len() + a]`.
    pub cells: Vec<Cell>,
}

/// `"80.37 ± 0.07"` from fractions.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

impl BenchResult {
    pub fn cell(&self, encoder: usize, arch: usize) -> &Cell {
        &self.cells[encoder * self.archs.len() + arch]
    }

    pub fn failed(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.outcome.is_err())
    }

    pub fn all_ok(&self) -> bool {
        self.failed().next().is_none()
    }

    /// Columns in row `e` whose mean equals the row maximum.
    fn row_best(&self, e: usize) -> Vec<bool> {
        let means: Vec<Option<f64>> = (0..self.archs.len())
            .map(|a| self.cell(e, a).outcome.as_ref().ok().map(|s| s.mean))
            .collect();
        let best = means.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        means.iter().map(|m| *m == Some(best)).collect()
    }

    fn row_texts(&self, e: usize, bold: impl Fn(&str) -> String, failed: &str) -> Vec<String> {
        let best = self.row_best(e);
        (0..self.archs.len())
            .map(|a| match &self.cell(e, a).outcome {
                Ok(s) if best[a] => bold(&format_cell(s.mean, s.std)),
                Ok(s) => format_cell(s.mean, s.std),
                Err(_) => failed.to_string(),
            })
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Encoder |");
        for a in &self.archs {
            out.push_str(&format!(" {} |", a.title()));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.archs.len()));
        out.push('\n');
        for (e, name) in self.encoders.iter().enumerate() {
            out.push_str(&format!("| {name} |"));
            for t in self.row_texts(e, |s| format!("**{s}**"), "failed") {
                out.push_str(&format!(" {t} |"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_latex(&self) -> String {
        let esc = |s: &str| s.replace('\\', "\\textbackslash{}").replace('_', "\\_").replace('&', "\\&").replace('%', "\\%");
        let mut out = format!("\\begin{{tabular}}{{l{}}}\n\\hline\n", "c".repeat(self.archs.len()));
        out.push_str("Encoder");
        for a in &self.archs {
            out.push_str(&format!(" & {}", a.title()));
        }
        out.push_str(" \\\\\n\\hline\n");
        for (e, name) in self.encoders.iter().enumerate() {
            out.push_str(&esc(name));
            let texts = self.row_texts(e, |s| format!("\\textbf{{{s}}}"), "--");
            for t in texts {
                out.push_str(&format!(" & {}", t.replace('±', "$\\pm$")));
            }
            out.push_str(" \\\\\n");
        }
        out.push_str("\\hline\n\\end{tabular}\n");
        out
    }

    /// One record per cell, in grid order. Fractions are written with
    /// shortest round-trip precision so identical runs give identical bytes.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            let rec = match &c.outcome {
                Ok(s) => CsvRecord {
                    encoder: c.encoder.clone(),
                    arch: c.arch.name().to_string(),
                    status: "ok".into(),
                    mean: Some(s.mean),
                    std: Some(s.std),
                    cell: format_cell(s.mean, s.std),
                    seeds: join(&s.seeds),
                    epochs_ran: join(&s.epochs_ran),
                    test_accs: join(&s.test_accs),
                    error: String::new(),
                },
                Err(msg) => CsvRecord {
                    encoder: c.encoder.clone(),
                    arch: c.arch.name().to_string(),
                    status: "failed".into(),
                    mean: None,
                    std: None,
                    cell: String::new(),
                    seeds: String::new(),
                    epochs_ran: String::new(),
                    test_accs: String::new(),
                    error: msg.clone(),
                },
            };
            w.serialize(rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    /// Inverse of [`BenchResult::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut encoders: Vec<String> = Vec::new();
        let mut archs: Vec<Arch> = Vec::new();
        let mut cells = Vec::new();
        for rec in r.deserialize::<CsvRecord>() {
            let rec = rec.map_err(csv_err)?;
            let arch: Arch = rec.arch.parse()?;
            if !encoders.contains(&rec.encoder) {
                encoders.push(rec.encoder.clone());
            }
            if !archs.contains(&arch) {
                archs.push(arch);
            }
            let outcome = match rec.status.as_str() {
                "ok" => Ok(CellStats {
                    mean: rec.mean.ok_or_else(|| Error::Format("ok row without mean".into()))?,
                    std: rec.std.ok_or_else(|| Error::Format("ok row without std".into()))?,
                    seeds: split(&rec.seeds)?,
                    epochs_ran: split(&rec.epochs_ran)?,
                    test_accs: split(&rec.test_accs)?,
                }),
                "failed" => Err(rec.error),
                other => return Err(Error::Format(format!("unknown status {other:?}"))),
            };
            cells.push(Cell {
                encoder: rec.encoder,
                arch,
                outcome,
            });
        }
        let res = BenchResult { encoders, archs, cells };
        if res.cells.len() != res.encoders.len() * res.archs.len() {
            return Err(Error::Format("CSV does not form a complete grid".into()));
        }
        Ok(res)
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRecord {
    encoder: String,
    arch: String,
    status: String,
    mean: Option<f64>,
    std: Option<f64>,
    /// Table text, percent with two decimals.
    cell: String,
    seeds: String,
    epochs_ran: String,
    test_accs: String,
    error: String,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn split<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|x| x.parse().map_err(|_| Error::Format(format!("bad list entry {x:?}"))))
        .collect()
}
