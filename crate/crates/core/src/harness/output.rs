use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// One sampler run. Metric fields are empty when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub fingerprint: String,
    pub sampler: String,
    pub variant: String,
    pub cell: String,
    pub problem: usize,
    pub repetition: usize,
    pub n_steps: Option<usize>,
    pub k_max: Option<usize>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub seed: u64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub mse: Option<f64>,
    pub residual: Option<f64>,
    /// Wall-clock seconds; the only column that differs between reruns.
    pub runtime: Option<f64>,
    pub iterations: Option<usize>,
    pub error: String,
}

impl ResultRow {
    pub const HEADER: &'static [&'static str] = &[
        "fingerprint",
        "sampler",
        "variant",
        "cell",
        "problem",
        "repetition",
        "n_steps",
        "k_max",
        "lambda",
        "delta",
        "seed",
        "psnr",
        "ssim",
        "mse",
        "residual",
        "runtime",
        "iterations",
        "error",
    ];
}

/// Mean and spread of one (sampler, cell) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sampler: String,
    pub variant: String,
    pub cell: String,
    pub n_steps: Option<usize>,
    pub k_max: Option<usize>,
    pub lambda: Option<f64>,
    pub runs: usize,
    pub failures: usize,
    pub psnr_mean: Option<f64>,
    pub psnr_std: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub ssim_std: Option<f64>,
    pub residual_mean: Option<f64>,
    pub residual_std: Option<f64>,
    pub runtime_mean: Option<f64>,
    pub iterations_mean: Option<f64>,
}

impl SummaryRow {
    pub const HEADER: &'static [&'static str] = &[
        "sampler",
        "variant",
        "cell",
        "n_steps",
        "k_max",
        "lambda",
        "runs",
        "failures",
        "psnr_mean",
        "psnr_std",
        "ssim_mean",
        "ssim_std",
        "residual_mean",
        "residual_std",
        "runtime_mean",
        "iterations_mean",
    ];
}

/// PSNR of the clean estimate at each sampling step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub sampler: String,
    pub cell: String,
    pub problem: usize,
    pub repetition: usize,
    /// Sampler index, counting down from `N`.
    pub step: usize,
    pub t: usize,
    pub psnr: f64,
    pub data_term: f64,
    pub iterations: usize,
}

impl CurveRow {
    pub const HEADER: &'static [&'static str] =
        &["sampler", "cell", "problem", "repetition", "step", "t", "psnr", "data_term", "iterations"];
}

/// Write `rows` under `header`; the header is present even with no rows.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(ResultRow::HEADER.iter().copied()) {
        return Err(invalid(format!("{} does not have the results.csv columns", path.display())));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// Group rows by sampler and cell, in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let key = (r.sampler.as_str(), r.cell.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(sampler, cell)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.sampler == sampler && r.cell == cell).collect();
            let ok: Vec<&ResultRow> = group.iter().copied().filter(|r| r.error.is_empty()).collect();
            let collect = |f: fn(&ResultRow) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
            let (psnr_mean, psnr_std) = mean_std(&collect(|r| r.psnr));
            let (ssim_mean, ssim_std) = mean_std(&collect(|r| r.ssim));
            let (residual_mean, residual_std) = mean_std(&collect(|r| r.residual));
            let (runtime_mean, _) = mean_std(&collect(|r| r.runtime));
            let (iterations_mean, _) = mean_std(&collect(|r| r.iterations.map(|i| i as f64)));
            let first = ok.first().copied().unwrap_or(group[0]);
            SummaryRow {
                sampler: sampler.to_string(),
                variant: first.variant.clone(),
                cell: cell.to_string(),
                n_steps: first.n_steps,
                k_max: first.k_max,
                lambda: first.lambda,
                runs: group.len(),
                failures: group.len() - ok.len(),
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
                residual_mean,
                residual_std,
                runtime_mean,
                iterations_mean,
            }
        })
        .collect()
}

/// Fixed-width text rendering of a summary for terminals.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let f = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |x| format!("{x:.digits$}"));
    let mut s = format!(
        "{:<20} {:<18} {:>5} {:>5} {:>16} {:>16} {:>10} {:>9}\n",
        "sampler", "cell", "runs", "fail", "psnr (dB)", "ssim", "residual", "iters"
    );
    for r in rows {
        let pm = |m: Option<f64>, sd: Option<f64>, d: usize| match m {
            Some(_) => format!("{} ± {}", f(m, d), f(sd, d)),
            None => "-".to_string(),
        };
        let _ = writeln!(
            s,
            "{:<20} {:<18} {:>5} {:>5} {:>16} {:>16} {:>10} {:>9}",
            r.sampler,
            r.cell,
            r.runs,
            r.failures,
            pm(r.psnr_mean, r.psnr_std, 2),
            pm(r.ssim_mean, r.ssim_std, 3),
            f(r.residual_mean, 4),
            f(r.iterations_mean, 1),
        );
    }
    s
}

/// 8-bit binary PGM of a 2-D signal, mapping `[-1, 1]` to `[0, 255]`.
pub fn write_pgm(path: &Path, x: &Tensor) -> Result<()> {
    let [h, w] = x.shape() else {
        return Err(invalid(format!("PGM needs a 2-D signal, got shape {:?}", x.shape())));
    };
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = x.data().iter().map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sampler: &str, psnr: Option<f64>, error: &str) -> ResultRow {
        ResultRow {
            fingerprint: "ab".into(),
            sampler: sampler.into(),
            variant: "sitcom".into(),
            cell: "base".into(),
            problem: 0,
            repetition: 0,
            n_steps: Some(20),
            k_max: Some(20),
            lambda: Some(0.0),
            delta: Some(0.1),
            seed: 1,
            psnr,
            ssim: None,
            mse: psnr.map(|_| 0.01),
            residual: psnr.map(|_| 0.5),
            runtime: psnr.map(|_| 0.2),
            iterations: psnr.map(|_| 40),
            error: error.into(),
        }
    }

    #[test]
    fn summary_statistics() {
        let rows =
            vec![row("a", Some(20.0), ""), row("b", Some(10.0), ""), row("a", Some(24.0), ""), row("a", None, "boom")];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].sampler, "a");
        assert_eq!((s[0].runs, s[0].failures), (3, 1));
        assert_eq!(s[0].psnr_mean, Some(22.0));
        assert!((s[0].psnr_std.unwrap() - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[0].ssim_mean, None);
        assert_eq!(s[1].psnr_std, Some(0.0));
        let all_failed = summarize(&[row("c", None, "x")]);
        assert_eq!(all_failed[0].psnr_mean, None);
        assert!(format_summary(&s).contains("22.00 ± 2.83"));
    }

    #[test]
    fn csv_round_trip_and_empty_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        write_csv::<ResultRow>(&path, &[], ResultRow::HEADER).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.trim(), ResultRow::HEADER.join(","));
        assert!(read_results(&path).unwrap().is_empty());

        let rows = vec![row("a", Some(1.0 / 3.0), ""), row("b", None, "bad, \"quoted\" error")];
        write_csv(&path, &rows, ResultRow::HEADER).unwrap();
        assert_eq!(read_results(&path).unwrap(), rows);

        let other = dir.path().join("other.csv");
        std::fs::write(&other, "x,y\n1,2\n").unwrap();
        assert!(read_results(&other).is_err());
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let x = Tensor::new(vec![2, 3], vec![-1.0, 0.0, 1.0, -2.0, 2.0, 0.5]).unwrap();
        write_pgm(&path, &x).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 255, 0, 255, 191]);
        assert!(write_pgm(&path, &Tensor::zeros(&[4])).is_err());
    }
}
