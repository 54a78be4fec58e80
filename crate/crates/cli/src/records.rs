//! CSV schemas.
//!
//! Every file is RFC-4180 CSV with a header row, `.` as decimal separator
//! and reals printed with 9 significant digits (`%.9g` style).

use std::io::{Read, Write};

use anyhow::{bail, Context, Result};
use trio_core::latent::GaussianBelief;
use trio_core::meta::{TestRunRecord, TrainLogRow};
use trio_core::tracking::TrackPoint;

/// Shortest `%.9g` rendering: fixed notation for exponents in `[-5, 9)`,
/// scientific otherwise, trailing zeros removed.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().quote_style(csv::QuoteStyle::Necessary).terminator(csv::Terminator::CRLF).from_writer(w)
}

pub fn test_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["seed", "task", "episode", "return"].iter().map(|s| s.to_string()).collect();
    for k in 0..dim {
        for c in ["true", "post_mean", "post_std", "prior_mean", "prior_std"] {
            h.push(format!("{c}_{k}"));
        }
    }
    h
}

/// One row per episode. Prior columns hold the prior given to the task
/// (tracker prediction, oracle or uninformative prior).
pub fn write_test_csv<W: Write>(record: &TestRunRecord, w: W) -> Result<()> {
    let dim = record.sequence.dim();
    let mut out = writer(w);
    out.write_record(test_header(dim))?;
    for task in &record.tasks {
        for (e, ep) in task.episodes.iter().enumerate() {
            let mut row = vec![record.seed.to_string(), task.task.to_string(), e.to_string(), fmt_real(ep.ret)];
            for k in 0..dim {
                row.push(fmt_real(task.true_latent.0[k]));
                row.push(fmt_real(ep.posterior.mean()[k]));
                row.push(fmt_real(ep.posterior.std()[k]));
                row.push(fmt_real(task.prior.mean()[k]));
                row.push(fmt_real(task.prior.std()[k]));
            }
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRow {
    pub seed: u64,
    pub task: usize,
    pub episode: usize,
    pub ret: f64,
    pub true_latent: Vec<f64>,
    pub posterior: GaussianBelief,
    pub prior: GaussianBelief,
}

pub fn read_test_csv<R: Read>(r: R) -> Result<Vec<TestRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let cols = header.len();
    if cols < 4 || (cols - 4) % 5 != 0 {
        bail!("unexpected test CSV header with {cols} columns");
    }
    let dim = (cols - 4) / 5;
    if header.iter().collect::<Vec<_>>() != test_header(dim) {
        bail!("unexpected test CSV header: {header:?}");
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let f = |j: usize| -> Result<f64> { rec[j].parse().with_context(|| format!("row {}: column {j}", i + 1)) };
        let col = |c: usize| -> Result<Vec<f64>> { (0..dim).map(|k| f(4 + 5 * k + c)).collect() };
        rows.push(TestRow {
            seed: rec[0].parse()?,
            task: rec[1].parse()?,
            episode: rec[2].parse()?,
            ret: f(3)?,
            true_latent: col(0)?,
            posterior: GaussianBelief::new(col(1)?, col(2)?)?,
            prior: GaussianBelief::new(col(3)?, col(4)?)?,
        });
    }
    Ok(rows)
}

pub const TRAIN_LOG_HEADER: [&str; 14] = [
    "iteration",
    "tasks",
    "env_steps",
    "off_prior_steps",
    "mean_return",
    "elbo",
    "mse",
    "trace",
    "kl",
    "actor_loss",
    "critic_loss",
    "entropy",
    "clip_fraction",
    "approx_kl",
];

pub fn write_train_log<W: Write>(rows: &[TrainLogRow], w: W) -> Result<()> {
    let mut out = writer(w);
    out.write_record(TRAIN_LOG_HEADER)?;
    for r in rows {
        let mut rec = vec![r.iteration.to_string(), r.tasks.to_string(), r.env_steps.to_string(), r.off_prior_steps.to_string()];
        rec.extend(
            [r.mean_return, r.elbo, r.mse, r.trace, r.kl, r.actor_loss, r.critic_loss, r.entropy, r.clip_fraction, r.approx_kl]
                .map(fmt_real),
        );
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn track_header(dim: usize) -> Vec<String> {
    let mut h = vec!["seed".to_string(), "task".to_string()];
    for k in 0..dim {
        for c in ["true", "observed", "pred_mean", "pred_std", "abs_err"] {
            h.push(format!("{c}_{k}"));
        }
    }
    h
}

pub fn write_track_csv<W: Write>(seed: u64, rows: &[TrackPoint], w: W) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.truth.len());
    let mut out = writer(w);
    out.write_record(track_header(dim))?;
    for r in rows {
        let mut rec = vec![seed.to_string(), r.task.to_string()];
        for k in 0..dim {
            rec.push(fmt_real(r.truth[k]));
            rec.push(fmt_real(r.observed[k]));
            rec.push(fmt_real(r.prediction.mean()[k]));
            rec.push(fmt_real(r.prediction.std()[k]));
            rec.push(fmt_real((r.prediction.mean()[k] - r.truth[k]).abs()));
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn rollout_header(state_dim: usize, action_dim: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "episode".to_string()];
    h.extend((0..state_dim).map(|k| format!("state_{k}")));
    h.extend((0..action_dim).map(|k| format!("action_{k}")));
    h.push("reward".into());
    h.extend((0..state_dim).map(|k| format!("next_state_{k}")));
    h.push("done".into());
    h
}

pub struct RolloutWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> RolloutWriter<W> {
    pub fn new(w: W, state_dim: usize, action_dim: usize) -> Result<Self> {
        let mut out = writer(w);
        out.write_record(rollout_header(state_dim, action_dim))?;
        Ok(RolloutWriter { out })
    }

    pub fn row(&mut self, step: usize, episode: usize, t: &trio_core::envs::Transition) -> Result<()> {
        let mut rec = vec![step.to_string(), episode.to_string()];
        rec.extend(t.state.iter().map(|&v| fmt_real(v)));
        rec.extend(t.action.iter().map(|&v| fmt_real(v)));
        rec.push(fmt_real(t.reward));
        rec.extend(t.next_state.iter().map(|&v| fmt_real(v)));
        rec.push(u8::from(t.done).to_string());
        self.out.write_record(&rec)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_real(0.0), "0");
        assert_eq!(fmt_real(1.0), "1");
        assert_eq!(fmt_real(-100.0), "-100");
        assert_eq!(fmt_real(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_real(2.0 / 3.0 * 1e5), "66666.6667");
        assert_eq!(fmt_real(123456789.0), "123456789");
        assert_eq!(fmt_real(1234567890.0), "1.23456789e+09");
        assert_eq!(fmt_real(1e-4), "0.0001");
        assert_eq!(fmt_real(1.5e-7), "1.5e-07");
        assert_eq!(fmt_real(-0.0001234567891), "-0.000123456789");
    }

    #[test]
    fn nine_digits_round_trip_to_nine_digits() {
        for x in [std::f64::consts::PI, -2.718281828459045e-3, 6.02214076e23, 1.0 / 7.0] {
            let y: f64 = fmt_real(x).parse().unwrap();
            assert!(((x - y) / x).abs() < 5e-9, "{x} -> {y}");
        }
    }
}
