//! One function per subcommand.

use std::io::Write;

use oti_core::analysis::{
    coverage_check, delta_sweep, lemma1_empirical_check, m_sweep, theoretical_free_pulls,
    verify_ucb_lower_bound, Verdict,
};
use oti_core::bandit::{generate_random_instance, read_instance, write_instance, InstanceMetadata};
use oti_core::report::{self, StepCsvWriter, Summary};
use oti_core::seeding::{episode_seed, rng_from_seed};
use oti_core::sim::{run_episode_with, run_monte_carlo_with, MonteCarloResult, Schedule};
use oti_core::{BehaviorSpec, CbVariant, IncentiveBehavior, LocalInstanceSet, Mode, SimConfig};

use crate::{CliError, Config, OutDir};

pub struct Context {
    pub cfg: Config,
    pub out: OutDir,
    pub full_trace: bool,
}

impl Context {
    fn with_out(&self, out: OutDir) -> Self {
        Self {
            cfg: self.cfg.clone(),
            out,
            full_trace: self.full_trace,
        }
    }

    pub fn instance(&self) -> Result<LocalInstanceSet, CliError> {
        match &self.cfg.instance.file {
            Some(path) => Ok(read_instance(path)?.0),
            None => Ok(LocalInstanceSet::toy()),
        }
    }

    pub fn sim(&self) -> SimConfig {
        self.cfg.sim.to_sim_config()
    }
}

fn check_verdicts(out: &OutDir, verdicts: &[Verdict]) -> Result<(), CliError> {
    out.write("verdict.json", |w| report::write_verdicts_json(w, verdicts))?;
    for v in verdicts {
        println!(
            "{} {}: {} (threshold {})",
            if v.pass { "PASS" } else { "FAIL" },
            v.check,
            v.statistic,
            v.threshold
        );
    }
    let failed: Vec<&str> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| v.check.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}

fn write_batch(
    ctx: &Context,
    inst: &LocalInstanceSet,
    cfg: &SimConfig,
    mode: Mode,
    res: &MonteCarloResult,
) -> Result<(), CliError> {
    let out = &ctx.out;
    out.write("episodes.csv", |w| {
        report::write_episodes_csv(w, &res.traces)
    })?;
    out.write("c_pair.csv", |w| report::write_c_pair_csv(w, &res.traces))?;
    out.write("free_pulls.csv", |w| {
        report::write_free_pulls_csv(w, &res.traces)
    })?;
    let summary = Summary {
        mode: match mode {
            Mode::Oti => "oti",
            Mode::Passive => "passive",
        },
        agents: inst.agents(),
        arms: inst.arms(),
        config: cfg,
        aggregate: &res.aggregate,
    };
    out.write("summary.json", |w| report::write_json(w, &summary))?;
    let theory = theoretical_free_pulls(inst, cfg.kappa_steps())?;
    out.write("free_pull_comparison.csv", |w| {
        report::write_free_pull_comparison_csv(w, &theory, &res.aggregate.mean_free_pulls)
    })?;
    if ctx.full_trace {
        let mut trace = StepCsvWriter::new(out.create("trace.csv")?)?;
        run_episode_with(
            inst,
            cfg,
            episode_seed(cfg.master_seed, 0),
            mode,
            &mut trace,
        )?;
        trace.finish()?;
    }
    Ok(())
}

fn batch(ctx: &Context, cfg: &SimConfig, mode: Mode) -> Result<MonteCarloResult, CliError> {
    let inst = ctx.instance()?;
    let res = run_monte_carlo_with(&inst, cfg, mode, Schedule::Parallel)?;
    write_batch(ctx, &inst, cfg, mode, &res)?;
    let a = &res.aggregate;
    println!(
        "{} runs: accuracy {}, mean C(T) {} (std {}), per-arm incentives {:?}",
        a.runs,
        a.accuracy,
        a.mean_c_total,
        a.std_c_total,
        a.mean_c_per_arm()
    );
    Ok(res)
}

pub fn simulate(ctx: &Context, mode: Mode) -> Result<(), CliError> {
    batch(ctx, &ctx.sim(), mode).map(drop)
}

pub fn sweep_delta(ctx: &Context) -> Result<(), CliError> {
    let e = &ctx.cfg.experiment;
    let rep = delta_sweep(&ctx.instance()?, &ctx.sim(), &e.deltas)?;
    ctx.out.write("delta_sweep.csv", |w| {
        report::write_delta_sweep_csv(w, &rep)
    })?;
    ctx.out
        .write("summary.json", |w| report::write_json(w, &rep))?;
    check_verdicts(&ctx.out, &rep.verdicts(e.r2_threshold))
}

pub fn sweep_m(ctx: &Context) -> Result<(), CliError> {
    let e = &ctx.cfg.experiment;
    let cfg = SimConfig {
        runs: e.m_sweep_runs,
        ..ctx.sim()
    };
    let rep = m_sweep(&ctx.cfg.generator, &cfg, &e.m_values)?;
    ctx.out
        .write("m_sweep.csv", |w| report::write_m_sweep_csv(w, &rep))?;
    ctx.out
        .write("summary.json", |w| report::write_json(w, &rep))?;
    check_verdicts(&ctx.out, &rep.verdicts(e.end_ratio))
}

pub fn verify_ucb_bound(ctx: &Context) -> Result<(), CliError> {
    let e = &ctx.cfg.experiment;
    let s = &ctx.cfg.sim;
    let rep = verify_ucb_lower_bound(&e.ucb_row, s.alpha, e.ucb_lambda, e.ucb_runs, s.master_seed)?;
    ctx.out
        .write("ucb_bound.csv", |w| report::write_ucb_bound_csv(w, &rep))?;
    ctx.out
        .write("summary.json", |w| report::write_json(w, &rep))?;
    check_verdicts(&ctx.out, &[rep.verdict()])
}

pub fn generate_instance(ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.cfg.sim.master_seed;
    let gen = &ctx.cfg.generator;
    let inst = generate_random_instance(gen, &mut rng_from_seed(seed))?;
    let path = ctx.out.path("instance.toml");
    if path.exists() && !ctx.out.force() {
        return Err(CliError::Exists(path));
    }
    let meta = InstanceMetadata {
        seed: Some(seed),
        generator: Some(gen.clone()),
    };
    write_instance(&path, &inst, Some(&meta))?;
    let g = inst.global_view();
    println!(
        "{} agents x {} arms, best global arm {}, delta_min {} -> {}",
        inst.agents(),
        inst.arms(),
        g.k_star + 1,
        g.delta_min,
        path.display()
    );
    Ok(())
}

pub fn lemma1_check(ctx: &Context) -> Result<(), CliError> {
    let e = &ctx.cfg.experiment;
    let cfg = ctx.sim();
    if e.lemma1_agent == 0 {
        return Err(CliError::Config(
            "experiment.lemma1_agent is 1-based".into(),
        ));
    }
    let refuse_at = e.lemma1_refuse_at.unwrap_or(cfg.kappa_steps() + 1);
    let rep = lemma1_empirical_check(&ctx.instance()?, &cfg, e.lemma1_agent - 1, refuse_at)?;
    ctx.out
        .write("lemma1.csv", |w| report::write_lemma1_csv(w, &rep))?;
    ctx.out
        .write("summary.json", |w| report::write_json(w, &rep))?;
    println!(
        "R_follow {} +- {}, R_refuse {} +- {}, {} of {} runs without an offer",
        rep.mean_follow,
        rep.stderr_follow,
        rep.mean_refuse,
        rep.stderr_refuse,
        rep.runs_without_offer,
        rep.runs
    );
    check_verdicts(&ctx.out, &[rep.verdict()])
}

fn run_step(
    name: &str,
    verdicts: &mut Vec<Verdict>,
    notes: &mut Vec<String>,
    step: impl FnOnce() -> Result<(Vec<Verdict>, String), CliError>,
) -> Result<(), CliError> {
    eprintln!("== {name}");
    let (v, note) = step()?;
    verdicts.extend(v);
    notes.push(format!("## {name}\n\n{note}\n"));
    Ok(())
}

fn yes_no(v: &Verdict) -> &'static str {
    if v.pass {
        "pass"
    } else {
        "FAIL"
    }
}

/// Runs every experiment with the configured defaults into subdirectories
/// of the output directory, then writes a combined `verdict.json` and a
/// `README.md` with expected and observed values.
pub fn repro(ctx: &Context) -> Result<(), CliError> {
    let base = ctx.sim();
    let e = &ctx.cfg.experiment;
    let mut verdicts = Vec::new();
    let mut notes = Vec::new();

    run_step("identification", &mut verdicts, &mut notes, || {
        let sub = ctx.with_out(ctx.out.sub("identification")?);
        let res = batch(&sub, &base, Mode::Oti)?;
        let a = &res.aggregate;
        let v = Verdict::at_least("oti_accuracy", a.accuracy, 1.0);
        let note = format!(
            "Expected: the best global arm is output in every run.\n\
             Observed: accuracy {} over {} runs ({}); mean C(T) {}; per-arm incentives {:?}; \
             incentives on each agent's local optimum {:?}.",
            a.accuracy,
            a.runs,
            yes_no(&v),
            a.mean_c_total,
            a.mean_c_per_arm(),
            local_optimum_mass(&sub.instance()?, &res),
        );
        Ok((vec![v], note))
    })?;

    run_step("passive", &mut verdicts, &mut notes, || {
        let sub = ctx.with_out(ctx.out.sub("passive")?);
        let res = batch(&sub, &base, Mode::Passive)?;
        let a = &res.aggregate;
        let v = Verdict {
            check: "passive_accuracy_in_band".into(),
            statistic: a.accuracy,
            threshold: 0.38,
            pass: (0.38..=0.68).contains(&a.accuracy),
        };
        let note = format!(
            "Expected: accuracy near 0.53 on the toy instance (accepted band [0.38, 0.68]).\n\
             Observed: accuracy {} over {} runs ({}).",
            a.accuracy,
            a.runs,
            yes_no(&v)
        );
        Ok((vec![v], note))
    })?;

    run_step("delta_sweep", &mut verdicts, &mut notes, || {
        let sub = ctx.out.sub("delta_sweep")?;
        let rep = delta_sweep(&ctx.instance()?, &base, &e.deltas)?;
        sub.write("delta_sweep.csv", |w| {
            report::write_delta_sweep_csv(w, &rep)
        })?;
        sub.write("summary.json", |w| report::write_json(w, &rep))?;
        let v = rep.verdicts(e.r2_threshold);
        let means: Vec<f64> = rep
            .points
            .iter()
            .map(|p| p.aggregate.mean_c_total)
            .collect();
        let note = format!(
            "Expected: mean C(T) grows linearly in ln(1/delta), R^2 >= {}.\n\
             Observed: deltas {:?}, mean C(T) {:?}, fit {:?}.",
            e.r2_threshold, e.deltas, means, rep.fit
        );
        Ok((v, note))
    })?;

    run_step("m_sweep", &mut verdicts, &mut notes, || {
        let sub = ctx.out.sub("m_sweep")?;
        let cfg = SimConfig {
            runs: e.m_sweep_runs,
            ..base.clone()
        };
        let rep = m_sweep(&ctx.cfg.generator, &cfg, &e.m_values)?;
        sub.write("m_sweep.csv", |w| report::write_m_sweep_csv(w, &rep))?;
        sub.write("summary.json", |w| report::write_json(w, &rep))?;
        let table: Vec<String> = rep
            .rows
            .iter()
            .map(|r| {
                format!(
                    "M={} C={} acc={}",
                    r.agents, r.aggregate.mean_c_total, r.aggregate.accuracy
                )
            })
            .collect();
        let note = format!(
            "Expected: mean C(T) decreases with M and is essentially zero beyond about 120 agents.\n\
             Observed: {}; first M with zero cost: {:?}; Spearman {:?}.",
            table.join(", "),
            rep.first_zero,
            rep.spearman
        );
        Ok((rep.verdicts(e.end_ratio), note))
    })?;

    run_step("stochastic", &mut verdicts, &mut notes, || {
        let sub = ctx.with_out(ctx.out.sub("stochastic")?);
        let cfg = SimConfig {
            never_ban: true,
            behavior: BehaviorSpec::Shared(IncentiveBehavior::StochasticFollow { p_follow: 0.8 }),
            ..base.clone()
        };
        let res = batch(&sub, &cfg, Mode::Oti)?;
        let a = &res.aggregate;
        let v = Verdict::at_least("stochastic_accuracy", a.accuracy, 1.0);
        let note = format!(
            "Expected: agents follow with probability 0.8, nobody is banned, and the best arm is still found.\n\
             Observed: accuracy {} ({}); mean C(T) {}; per-arm incentives {:?}.",
            a.accuracy,
            yes_no(&v),
            a.mean_c_total,
            a.mean_c_per_arm()
        );
        Ok((vec![v], note))
    })?;

    run_step("ucb_bound", &mut verdicts, &mut notes, || {
        let sub = ctx.out.sub("ucb_bound")?;
        let rep = verify_ucb_lower_bound(
            &e.ucb_row,
            base.alpha,
            e.ucb_lambda,
            e.ucb_runs,
            base.master_seed,
        )?;
        sub.write("ucb_bound.csv", |w| report::write_ucb_bound_csv(w, &rep))?;
        sub.write("summary.json", |w| report::write_json(w, &rep))?;
        let v = rep.verdict();
        let note = format!(
            "Expected: violation rate at most 2K/Lambda = {} plus three standard errors.\n\
             Observed: {} violations in {} runs ({}).",
            rep.bound,
            rep.violation_count,
            rep.runs,
            yes_no(&v)
        );
        Ok((vec![v], note))
    })?;

    run_step("coverage", &mut verdicts, &mut notes, || {
        let sub = ctx.with_out(ctx.out.sub("coverage")?);
        let cfg = SimConfig {
            cb_variant: CbVariant::Full,
            delta: 0.05,
            runs: 200,
            ..base.clone()
        };
        let res = batch(&sub, &cfg, Mode::Oti)?;
        let rep = coverage_check(&res.traces, cfg.delta);
        let v = rep.verdict();
        let note = format!(
            "Expected: with the full confidence radius, estimates stay inside their intervals in at least 95% of runs.\n\
             Observed: coverage {} over {} runs ({}).",
            rep.coverage,
            rep.runs,
            yes_no(&v)
        );
        Ok((vec![v], note))
    })?;

    let mut readme = ctx.out.create("README.md")?;
    let io = |e| CliError::Io {
        path: ctx.out.path("README.md"),
        source: e,
    };
    writeln!(readme, "# Reproduction run\n").map_err(io)?;
    for n in &notes {
        writeln!(readme, "{n}").map_err(io)?;
    }
    readme.flush().map_err(io)?;
    check_verdicts(&ctx.out, &verdicts)
}

fn local_optimum_mass(inst: &LocalInstanceSet, res: &MonteCarloResult) -> Vec<f64> {
    (0..inst.agents())
        .map(|m| {
            let row = inst.row(m);
            let best = oti_core::bandit::argmax_lowest(row);
            res.aggregate.mean_c_pair[m][best]
        })
        .collect()
}
