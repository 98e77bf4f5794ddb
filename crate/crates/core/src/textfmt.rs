//! Structured text formats for HMMs and moment matrices.
//!
//! Human-readable key/value header plus matrix blocks. Every float is
//! printed with 17 significant digits, which round-trips IEEE doubles
//! bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hmm::Hmm;
use crate::mat::Mat;
use crate::operator::{MomentEstimator, MomentMatrix};

/// 17 significant digits; parses back to the identical f64.
pub fn fmt_g17(v: f64) -> String {
    format!("{v:.16e}")
}

const HMM_HEADER: &str = "icl-lab hmm v1";
const MOMENT_HEADER: &str = "icl-lab moment-matrix v1";

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

fn write_mat_block(out: &mut String, m: &Mat) {
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt_g17(v)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

pub fn hmm_to_string(hmm: &Hmm) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HMM_HEADER}");
    let _ = writeln!(out, "d {}", hmm.num_states());
    let _ = writeln!(out, "m {}", hmm.num_obs());
    let _ = writeln!(out, "delimiter {}", hmm.delimiter());
    let _ = writeln!(
        out,
        "task_starts {}",
        hmm.task_starts().iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(
        out,
        "label_set {}",
        hmm.label_set().iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(
        out,
        "pretrain_init {}",
        hmm.pretrain_init().iter().map(|&v| fmt_g17(v)).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(out, "T");
    write_mat_block(&mut out, hmm.transition());
    let _ = writeln!(out, "B");
    write_mat_block(&mut out, hmm.emission());
    out
}

pub fn moment_to_string(m: &MomentMatrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MOMENT_HEADER}");
    let _ = writeln!(out, "dim {}", m.dim());
    let _ = writeln!(out, "init {}", m.init_label);
    let _ = writeln!(out, "length {}", m.length);
    match m.estimator {
        MomentEstimator::Exact { cap } => {
            let _ = writeln!(out, "estimator exact {cap}");
        }
        MomentEstimator::MonteCarlo { samples, seed } => {
            let _ = writeln!(out, "estimator mc {samples} {seed}");
        }
    }
    let _ = writeln!(out, "ridge {}", fmt_g17(m.ridge));
    let _ = writeln!(out, "sigma");
    write_mat_block(&mut out, &m.sigma);
    out
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Lines<'a> {
    file: String,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(file: &str, text: &'a str) -> Self {
        Lines { file: file.to_string(), iter: text.lines().enumerate() }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::TextFormat { file: self.file.clone(), line: line + 1, message: message.into() }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (idx, raw) in self.iter.by_ref() {
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            return Ok((idx, t));
        }
        Err(Error::TextFormat {
            file: self.file.clone(),
            line: 0,
            message: "unexpected end of file".into(),
        })
    }

    fn expect_key(&mut self, key: &str) -> Result<(usize, Vec<String>)> {
        let (idx, line) = self.next_line()?;
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or_default();
        if head != key {
            return Err(self.err(idx, format!("expected field `{key}`, found `{head}`")));
        }
        Ok((idx, parts.map(|s| s.to_string()).collect()))
    }

    fn parse_usize(&self, line: usize, s: &str, what: &str) -> Result<usize> {
        s.parse::<usize>().map_err(|_| self.err(line, format!("{what}: invalid integer `{s}`")))
    }

    fn parse_f64(&self, line: usize, s: &str, what: &str) -> Result<f64> {
        s.parse::<f64>().map_err(|_| self.err(line, format!("{what}: invalid float `{s}`")))
    }

    fn read_matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Mat> {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            let (idx, line) = self.next_line()?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != cols {
                return Err(self.err(
                    idx,
                    format!("{what} row {i}: expected {cols} values, found {}", vals.len()),
                ));
            }
            for (j, v) in vals.iter().enumerate() {
                m.set(i, j, self.parse_f64(idx, v, what)?);
            }
        }
        Ok(m)
    }
}

pub fn hmm_from_str(file: &str, text: &str) -> Result<Hmm> {
    let mut lines = Lines::new(file, text);
    let (idx, first) = lines.next_line()?;
    if first != HMM_HEADER {
        return Err(lines.err(idx, format!("expected header `{HMM_HEADER}`")));
    }
    let (l, v) = lines.expect_key("d")?;
    let d = lines.parse_usize(l, v.first().map(String::as_str).unwrap_or(""), "d")?;
    let (l, v) = lines.expect_key("m")?;
    let m = lines.parse_usize(l, v.first().map(String::as_str).unwrap_or(""), "m")?;
    let (l, v) = lines.expect_key("delimiter")?;
    let delimiter =
        lines.parse_usize(l, v.first().map(String::as_str).unwrap_or(""), "delimiter")?;
    let (l, v) = lines.expect_key("task_starts")?;
    let task_starts = v
        .iter()
        .map(|s| lines.parse_usize(l, s, "task_starts"))
        .collect::<Result<Vec<_>>>()?;
    let (l, v) = lines.expect_key("label_set")?;
    let label_set =
        v.iter().map(|s| lines.parse_usize(l, s, "label_set")).collect::<Result<Vec<_>>>()?;
    let (l, v) = lines.expect_key("pretrain_init")?;
    if v.len() != d {
        return Err(lines.err(l, format!("pretrain_init: expected {d} values, found {}", v.len())));
    }
    let pretrain_init =
        v.iter().map(|s| lines.parse_f64(l, s, "pretrain_init")).collect::<Result<Vec<_>>>()?;
    lines.expect_key("T")?;
    let transition = lines.read_matrix(d, d, "T")?;
    lines.expect_key("B")?;
    let emission = lines.read_matrix(d, m, "B")?;
    Hmm::new(d, m, transition, emission, task_starts, pretrain_init, delimiter, label_set)
}

pub fn moment_from_str(file: &str, text: &str) -> Result<MomentMatrix> {
    let mut lines = Lines::new(file, text);
    let (idx, first) = lines.next_line()?;
    if first != MOMENT_HEADER {
        return Err(lines.err(idx, format!("expected header `{MOMENT_HEADER}`")));
    }
    let (l, v) = lines.expect_key("dim")?;
    let dim = lines.parse_usize(l, v.first().map(String::as_str).unwrap_or(""), "dim")?;
    let (l, v) = lines.expect_key("init")?;
    let init_label = v
        .first()
        .cloned()
        .ok_or_else(|| lines.err(l, "init: missing label"))?;
    let (l, v) = lines.expect_key("length")?;
    let length = lines.parse_usize(l, v.first().map(String::as_str).unwrap_or(""), "length")?;
    let (l, v) = lines.expect_key("estimator")?;
    let estimator = match v.first().map(String::as_str) {
        Some("exact") => {
            let cap = lines.parse_usize(l, v.get(1).map(String::as_str).unwrap_or(""), "cap")?;
            MomentEstimator::Exact { cap: cap as u64 }
        }
        Some("mc") => {
            let samples =
                lines.parse_usize(l, v.get(1).map(String::as_str).unwrap_or(""), "samples")?;
            let seed = lines.parse_usize(l, v.get(2).map(String::as_str).unwrap_or(""), "seed")?;
            MomentEstimator::MonteCarlo { samples: samples as u64, seed: seed as u64 }
        }
        other => {
            return Err(lines.err(l, format!("estimator: expected `exact` or `mc`, got {other:?}")))
        }
    };
    let (l, v) = lines.expect_key("ridge")?;
    let ridge = lines.parse_f64(l, v.first().map(String::as_str).unwrap_or(""), "ridge")?;
    lines.expect_key("sigma")?;
    let sigma = lines.read_matrix(dim, dim, "sigma")?;
    if sigma.asymmetry() > 1e-10 {
        return Err(lines.err(0, "sigma block is not symmetric within 1e-10"));
    }
    Ok(MomentMatrix { sigma, init_label, length, estimator, ridge })
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::Io { path: parent.display().to_string(), source: e })?;
        }
    }
    std::fs::write(path, text)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

pub fn load_hmm(path: &Path) -> Result<Hmm> {
    let text = read_to_string(path)?;
    hmm_from_str(&path.display().to_string(), &text)
}

pub fn save_hmm(path: &Path, hmm: &Hmm) -> Result<()> {
    write_string(path, &hmm_to_string(hmm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assumptions::{generate_compliant_hmm, HmmSpec};
    use crate::operator::moment_matrix;

    #[test]
    fn g17_round_trips_awkward_floats() {
        for v in [
            1.0 / 3.0,
            0.1 + 0.2,
            f64::MIN_POSITIVE,
            1.7976931348623157e308,
            -0.0,
            5.551115123125783e-17,
        ] {
            let s = fmt_g17(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {s} -> {back}");
        }
    }

    #[test]
    fn hmm_round_trips_bit_exactly() {
        let hmm = generate_compliant_hmm(&HmmSpec::default(), 9).unwrap();
        let text = hmm_to_string(&hmm);
        let back = hmm_from_str("test", &text).unwrap();
        assert_eq!(hmm, back);
        // and the re-serialization is byte-identical
        assert_eq!(text, hmm_to_string(&back));
    }

    #[test]
    fn moment_round_trips() {
        let hmm = generate_compliant_hmm(
            &HmmSpec { num_tasks: 2, m: 7, d_per_task: 2, ..HmmSpec::default() },
            4,
        )
        .unwrap();
        let mut m = moment_matrix(
            &hmm,
            hmm.pretrain_init(),
            "pretrain",
            2,
            MomentEstimator::Exact { cap: 100_000 },
        )
        .unwrap();
        m.ridge = 1.25e-7;
        let text = moment_to_string(&m);
        let back = moment_from_str("test", &text).unwrap();
        assert_eq!(m.sigma, back.sigma);
        assert_eq!(m.estimator, back.estimator);
        assert_eq!(m.ridge, back.ridge);
        assert_eq!(text, moment_to_string(&back));
    }

    #[test]
    fn parser_names_the_line_on_errors() {
        let text = "icl-lab hmm v1\nd 2\nm nope\n";
        match hmm_from_str("bad.txt", text) {
            Err(Error::TextFormat { file, line, message }) => {
                assert_eq!(file, "bad.txt");
                assert_eq!(line, 3);
                assert!(message.contains("invalid integer"), "{message}");
            }
            other => panic!("expected TextFormat error, got {other:?}"),
        }
    }

    #[test]
    fn parser_rejects_wrong_header_and_field_order() {
        assert!(hmm_from_str("x", "not a header\n").is_err());
        let text = "icl-lab hmm v1\nm 2\nd 2\n";
        match hmm_from_str("x", text) {
            Err(Error::TextFormat { message, .. }) => {
                assert!(message.contains("expected field `d`"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }
}
