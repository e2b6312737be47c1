//! CSV and JSON emitters. Agents, arms and runs are numbered from 1 in
//! every file; floats use the shortest representation that round-trips.

use std::io::Write;

use serde::Serialize;

use crate::agent::IncentiveOffer;
use crate::analysis::{DeltaSweepReport, MSweepReport, RefusalReport, UcbBoundReport, Verdict};
use crate::error::{Error, Result};
use crate::principal::Principal;
use crate::sim::{AggregateResult, EpisodeObserver, EpisodeTrace, SimConfig, StepRecord};

fn num(x: f64) -> String {
    format!("{x}")
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::Io(e.error().to_string()))?
        .flush()?;
    Ok(())
}

/// One row per episode.
pub fn write_episodes_csv<W: Write>(out: W, traces: &[EpisodeTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "seed",
        "k_hat",
        "correct",
        "C_total",
        "S_final_size",
        "violation",
    ])?;
    for t in traces {
        w.write_record([
            t.seed.to_string(),
            (t.k_hat + 1).to_string(),
            flag(t.correct).to_string(),
            t.c_total.to_string(),
            t.s_final_size.to_string(),
            flag(t.confidence_violated).to_string(),
        ])?;
    }
    finish(w)
}

fn write_long<W: Write>(
    out: W,
    traces: &[EpisodeTrace],
    select: impl Fn(&EpisodeTrace) -> &Vec<Vec<u64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "m", "k", "value"])?;
    for (r, t) in traces.iter().enumerate() {
        for (m, row) in select(t).iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                w.write_record([
                    (r + 1).to_string(),
                    (m + 1).to_string(),
                    (k + 1).to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    finish(w)
}

/// Incentives per (run, agent, arm), long form.
pub fn write_c_pair_csv<W: Write>(out: W, traces: &[EpisodeTrace]) -> Result<()> {
    write_long(out, traces, |t| &t.c_pair)
}

/// Observing-phase pulls per (run, agent, arm), long form.
pub fn write_free_pulls_csv<W: Write>(out: W, traces: &[EpisodeTrace]) -> Result<()> {
    write_long(out, traces, |t| &t.free_pulls)
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub mode: &'a str,
    pub agents: usize,
    pub arms: usize,
    pub config: &'a SimConfig,
    pub aggregate: &'a AggregateResult,
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn write_verdicts_json<W: Write>(out: W, verdicts: &[Verdict]) -> Result<()> {
    write_json(out, verdicts)
}

pub fn write_delta_sweep_csv<W: Write>(out: W, rep: &DeltaSweepReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "delta",
        "ln_inv_delta",
        "accuracy",
        "mean_C_total",
        "std_C_total",
    ])?;
    for p in &rep.points {
        w.write_record([
            num(p.delta),
            num(p.log_inv_delta),
            num(p.aggregate.accuracy),
            num(p.aggregate.mean_c_total),
            num(p.aggregate.std_c_total),
        ])?;
    }
    finish(w)
}

pub fn write_m_sweep_csv<W: Write>(out: W, rep: &MSweepReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["M", "delta_min", "accuracy", "mean_C_total", "std_C_total"])?;
    for r in &rep.rows {
        w.write_record([
            r.agents.to_string(),
            num(r.delta_min),
            num(r.aggregate.accuracy),
            num(r.aggregate.mean_c_total),
            num(r.aggregate.std_c_total),
        ])?;
    }
    finish(w)
}

pub fn write_ucb_bound_csv<W: Write>(out: W, rep: &UcbBoundReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "threshold", "min_pulls"])?;
    for (k, (f, n)) in rep.thresholds.iter().zip(&rep.min_pulls).enumerate() {
        w.write_record([(k + 1).to_string(), num(*f), n.to_string()])?;
    }
    finish(w)
}

pub fn write_lemma1_csv<W: Write>(out: W, rep: &RefusalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run",
        "seed",
        "R_follow",
        "R_refuse",
        "refusal_step",
        "bonus_after_refusal",
    ])?;
    for (r, p) in rep.pairs.iter().enumerate() {
        w.write_record([
            (r + 1).to_string(),
            p.seed.to_string(),
            num(p.r_follow),
            num(p.r_refuse),
            p.refusal_step.map_or(String::new(), |s| s.to_string()),
            p.bonus_after_refusal.to_string(),
        ])?;
    }
    finish(w)
}

/// Reference free pulls next to the measured observing-phase means.
pub fn write_free_pull_comparison_csv<W: Write>(
    out: W,
    theoretical: &[Vec<f64>],
    measured: &[Vec<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m", "k", "theoretical", "measured_mean"])?;
    for (m, (th, me)) in theoretical.iter().zip(measured).enumerate() {
        for (k, (a, b)) in th.iter().zip(me).enumerate() {
            w.write_record([(m + 1).to_string(), (k + 1).to_string(), num(*a), num(*b)])?;
        }
    }
    finish(w)
}

/// Streams per-step records of one episode as CSV. The first write error
/// is kept and returned by [`StepCsvWriter::finish`].
pub struct StepCsvWriter<W: Write> {
    writer: csv::Writer<W>,
    error: Option<Error>,
}

impl<W: Write> StepCsvWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["t", "m", "arm", "reward", "offer", "followed"])?;
        Ok(Self {
            writer,
            error: None,
        })
    }

    pub fn finish(self) -> Result<()> {
        if let Some(e) = self.error {
            return Err(e);
        }
        finish(self.writer)
    }
}

impl<W: Write> EpisodeObserver for StepCsvWriter<W> {
    fn on_offers(&mut self, _t: u64, _offers: &[IncentiveOffer], _principal: &Principal) {}

    fn on_step(&mut self, r: &StepRecord) {
        if self.error.is_some() {
            return;
        }
        let res = self.writer.write_record([
            r.t.to_string(),
            (r.agent + 1).to_string(),
            (r.arm + 1).to_string(),
            num(r.reward),
            r.offer.map_or(String::new(), |k| (k + 1).to_string()),
            flag(r.followed).to_string(),
        ]);
        if let Err(e) = res {
            self.error = Some(e.into());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::LocalInstanceSet;
    use crate::sim::{run_episode_with, run_monte_carlo, Mode};

    fn small() -> SimConfig {
        SimConfig {
            horizon: 400,
            runs: 3,
            ..Default::default()
        }
    }

    #[test]
    fn episode_csv_layout() {
        let res = run_monte_carlo(&LocalInstanceSet::toy(), &small()).unwrap();
        let mut buf = Vec::new();
        write_episodes_csv(&mut buf, &res.traces).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "seed,k_hat,correct,C_total,S_final_size,violation"
        );
        assert_eq!(lines.len(), 4);
        let t = &res.traces[0];
        assert!(lines[1].starts_with(&format!("{},{},", t.seed, t.k_hat + 1)));
    }

    #[test]
    fn long_form_has_one_row_per_cell() {
        let res = run_monte_carlo(&LocalInstanceSet::toy(), &small()).unwrap();
        let mut buf = Vec::new();
        write_c_pair_csv(&mut buf, &res.traces).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2 * 3);
        assert!(text.lines().nth(1).unwrap().starts_with("1,1,1,"));
        let total: u64 = text
            .lines()
            .skip(1)
            .filter(|l| l.starts_with("1,"))
            .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, res.traces[0].c_total);
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0, 1e-300, 123456.789] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(2.0), "2");
    }

    #[test]
    fn step_csv_counts_every_action() {
        let inst = LocalInstanceSet::toy();
        let cfg = small();
        let mut buf = Vec::new();
        let mut w = StepCsvWriter::new(&mut buf).unwrap();
        run_episode_with(&inst, &cfg, 9, Mode::Oti, &mut w).unwrap();
        w.finish().unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 400 * 2);
        assert_eq!(
            text.lines()
                .nth(1)
                .unwrap()
                .split(',')
                .take(3)
                .collect::<Vec<_>>(),
            ["1", "1", "1"]
        );
    }

    #[test]
    fn verdicts_serialize() {
        let v = vec![Verdict::at_least("x", 1.0, 0.5)];
        let mut buf = Vec::new();
        write_verdicts_json(&mut buf, &v).unwrap();
        let back: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back[0]["check"], "x");
        assert_eq!(back[0]["pass"], true);
    }
}
