use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use causalwit::process_space::{
    default_psi, is_valid_process, named_process, switch_process, w_ocb, w_ocb_noisy, PartyLayout, ProcessJson,
    ProcessMatrix,
};
use causalwit::switch_tasks::{
    self as st, check_causal_theorem4, chiribella_witness_mc, finite_witness, game_to_witness, ocb_game_value,
    optimize_finite_weights, p_succ_sep, switch_correlations, GameWitness,
};
use causalwit::tensor_ops::{matrix_from_json, CMat, CVec, SystemLabel};
use causalwit::witness_engine::{
    self as we, born_table, decompose_witness_ocb, estimate_from_probabilities, generalized_robustness,
    random_robustness, resample_table, rr_monotonicity_counterexample, separable_decomposition, standard_error,
    verify_witness, witness_expectation, CausalWitness, Instrument, RobustnessResult, SdpOptions, Separability,
    WitnessJson, WITNESS_TOL,
};

use crate::report::{Artifacts, RunReport};
use crate::{Cli, Command, GameKind, Kind, Target};

#[derive(Debug)]
pub enum CliError {
    Domain(String),
    Usage(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Domain(m) | CliError::Usage(m) => f.write_str(m),
        }
    }
}

macro_rules! domain_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )*};
}

domain_from!(
    causalwit::witness_engine::WitnessError,
    causalwit::switch_tasks::SwitchError,
    causalwit::process_space::ProcessError,
    causalwit::tensor_ops::TensorError,
    std::io::Error,
    serde_json::Error
);

type Result<T> = std::result::Result<T, CliError>;

const SQRT2: f64 = std::f64::consts::SQRT_2;

struct Ctx<'a> {
    cli: &'a Cli,
    opts: SdpOptions,
    art: Artifacts,
    /// Acceptance margin for witness membership.
    wtol: f64,
}

pub fn run(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let c = &cli.common;
    if !(c.sdp_tol > 0.0 && c.tol > 0.0) {
        return Err(CliError::Usage("tolerances must be positive".into()));
    }
    let opts = SdpOptions { tol: c.sdp_tol, validity_tol: c.tol, ..SdpOptions::default() };
    let ctx = Ctx { cli, opts, art: Artifacts::new(&c.artifacts), wtol: WITNESS_TOL.max(10.0 * c.sdp_tol) };
    let mut rep = RunReport { command: argv, ..RunReport::default() };
    rep.tolerances.insert("sdp_tol".into(), c.sdp_tol);
    rep.tolerances.insert("validity_tol".into(), c.tol);
    let all_pass = match &cli.command {
        Command::Reproduce { target } => reproduce(&ctx, *target, &mut rep)?,
        Command::Robustness { kind, process } => robustness(&ctx, *kind, process, &mut rep)?,
        Command::WitnessVerify { file } => witness_verify(&ctx, file, &mut rep)?,
        Command::CheckSep { process } => check_sep(&ctx, process, &mut rep)?,
        Command::Decompose { process } => decompose(&ctx, process, &mut rep)?,
        Command::Game { game, process } => game_cmd(&ctx, *game, process, &mut rep)?,
        Command::Correlations { instruments } => correlations(&ctx, instruments, &mut rep)?,
    };
    if c.timing {
        rep.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    let text = serde_json::to_string_pretty(&rep)? + "\n";
    match &c.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Domain("some reference values were not reproduced; see the report".into()))
    }
}

fn load_process(spec: &str, tol: f64) -> Result<ProcessMatrix> {
    let w = if Path::new(spec).is_file() {
        let j: ProcessJson = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
        ProcessMatrix::from_json(&j)?
    } else {
        named_process(spec).map_err(|_| CliError::Usage(format!("{spec} is neither a file nor a known process")))?
    };
    let r = is_valid_process(&w.op, &w.layout, tol)?;
    if !r.verdict {
        return Err(CliError::Domain(format!(
            "invalid process: min eigenvalue {:.3e}, trace {}, subspace residual {:.3e}",
            r.min_eigenvalue, r.trace, r.subspace_residual
        )));
    }
    Ok(w)
}

fn file_label(order: &str) -> String {
    order.replace('<', "_")
}

fn write_witness(ctx: &Ctx, rep: &mut RunReport, key: &str, w: &CausalWitness) -> Result<()> {
    let path = ctx.art.write(&format!("{key}.json"), &w.to_json())?;
    rep.artifact(key, &path);
    Ok(())
}

fn write_robustness(
    ctx: &Ctx,
    rep: &mut RunReport,
    prefix: &str,
    r: &RobustnessResult,
    w: &ProcessMatrix,
) -> Result<()> {
    write_witness(ctx, rep, &format!("{prefix}-witness"), &r.witness)?;
    let noise = ProcessMatrix::new(r.decomposition.noise.clone(), w.layout.clone())?;
    let path = ctx.art.write(&format!("{prefix}-noise.json"), &noise.to_json())?;
    rep.artifact(&format!("{prefix}-noise"), &path);
    for (label, m) in &r.decomposition.components {
        let comp = ProcessMatrix::new(m.clone(), w.layout.clone())?;
        let key = format!("{prefix}-component-{}", file_label(label));
        let path = ctx.art.write(&format!("{key}.json"), &comp.to_json())?;
        rep.artifact(&key, &path);
    }
    Ok(())
}

fn robustness_results(ctx: &Ctx, rep: &mut RunReport, prefix: &str, r: &RobustnessResult) {
    let t = 10.0 * ctx.opts.tol;
    rep.scalar(&format!("{prefix}_witness_value"), r.witness_value, t);
    rep.scalar(&format!("{prefix}_gap"), r.gap, ctx.opts.tol);
    rep.scalar(&format!("{prefix}_noise_weight"), r.decomposition.noise_weight, t);
    rep.result(&format!("{prefix}_iterations"), r.iterations);
    rep.result(&format!("{prefix}_status"), "optimal");
    rep.scalar(&format!("{prefix}_witness_margin"), r.witness.margin, ctx.wtol);
}

fn reproduce(ctx: &Ctx, target: Target, rep: &mut RunReport) -> Result<bool> {
    rep.input("target", format!("{target:?}").to_lowercase());
    let mut ok = true;
    match target {
        Target::Ocb => {
            let w = w_ocb();
            let rr = random_robustness(&w, &ctx.opts)?;
            ok &= rep.checked("random_robustness", rr.value, SQRT2 - 1.0, 1e-6);
            ok &= rep.checked("witness_value", rr.witness_value, 1.0 - SQRT2, 1e-6);
            robustness_results(ctx, rep, "random", &rr);
            write_robustness(ctx, rep, "ocb-random", &rr, &w)?;
            let rg = generalized_robustness(&w, &ctx.opts)?;
            rep.scalar("generalized_robustness", rg.value, 10.0 * ctx.opts.tol);
            robustness_results(ctx, rep, "generalized", &rg);
            let d = decompose_witness_ocb();
            ok &= rep.checked("witness_decomposition_residual", d.residual, 0.0, 1e-12);
            ok &= rep.checked("ocb_game_value", ocb_game_value(&w)?, (2.0 + SQRT2) / 4.0, 1e-10);
            let boundary = random_robustness(&w_ocb_noisy(SQRT2 - 1.0)?, &ctx.opts)?;
            ok &= rep.checked("random_robustness_at_boundary", boundary.value, 0.0, 1e-6);
        }
        Target::Switch => {
            let n = ctx.cli.common.samples.unwrap_or(10_000);
            let seed = ctx.cli.common.seed;
            rep.input("samples", n);
            rep.input("seed", seed);
            let w = switch_process(&default_psi(), true)?;
            let rg = generalized_robustness(&w, &ctx.opts)?;
            ok &= rep.checked("generalized_robustness", rg.value, 0.5454, 1e-3);
            robustness_results(ctx, rep, "generalized", &rg);
            write_witness(ctx, rep, "switch-witness", &rg.witness)?;
            let (_, p, noise) = mc_game(ctx, n, seed)?;
            ok &= rep.checked("chiribella_p_sep", p, 0.9288, 5e-3);
            ok &= rep.checked("chiribella_noise_tolerance", noise, 0.0766, 6e-3);
            let (weights, fp, fnoise, _) = finite_game(ctx)?;
            ok &= rep.checked("finite_p_sep", fp, 0.8690, 1e-3);
            ok &= rep.checked("finite_noise_tolerance", fnoise, 0.1507, 2e-3);
            let path = ctx.art.write("finite-weights.json", &weights_json(&weights))?;
            rep.artifact("finite-weights", &path);
        }
        Target::Monotonicity => {
            let m = rr_monotonicity_counterexample(&ctx.opts)?;
            ok &= rep.checked("random_robustness_w1", m.random_w1, SQRT2 - 1.0, 1e-5);
            ok &= rep.checked("random_robustness_mapped", m.random_mapped, 2.0 * (SQRT2 - 1.0), 1e-5);
            rep.scalar("generalized_robustness_w1", m.generalized_w1, 10.0 * ctx.opts.tol);
            rep.scalar("generalized_robustness_mapped", m.generalized_mapped, 10.0 * ctx.opts.tol);
            let mono = m.generalized_mapped <= m.generalized_w1 + 1e-6;
            rep.result("generalized_monotone", json!({ "value": mono, "tolerance": 1e-6 }));
            ok &= mono;
        }
    }
    Ok(ok)
}

fn robustness(ctx: &Ctx, kind: Kind, spec: &str, rep: &mut RunReport) -> Result<bool> {
    rep.input("process", spec);
    rep.input("kind", format!("{kind:?}").to_lowercase());
    let w = load_process(spec, ctx.opts.validity_tol)?;
    let r = match kind {
        Kind::Generalized => generalized_robustness(&w, &ctx.opts)?,
        Kind::Random => random_robustness(&w, &ctx.opts)?,
    };
    rep.scalar("value", r.value, 10.0 * ctx.opts.tol);
    robustness_results(ctx, rep, "robustness", &r);
    write_robustness(ctx, rep, "robustness", &r, &w)?;
    Ok(true)
}

fn witness_verify(ctx: &Ctx, file: &Path, rep: &mut RunReport) -> Result<bool> {
    rep.input("file", file.display().to_string());
    let j: WitnessJson = serde_json::from_str(&std::fs::read_to_string(file)?)?;
    let (op, layout) = we::witness_from_json(&j)?;
    let v = verify_witness(&op, &layout, ctx.wtol, &ctx.opts)?;
    rep.result("accepted", v.accepted);
    rep.scalar("margin", v.margin, ctx.wtol);
    rep.result("status", v.status);
    if let Some(w) = &v.witness {
        let c = w.check_certificate();
        rep.result("certificate_check", c);
        write_witness(ctx, rep, "verified-witness", w)?;
    }
    Ok(true)
}

fn check_sep(ctx: &Ctx, spec: &str, rep: &mut RunReport) -> Result<bool> {
    rep.input("process", spec);
    let w = load_process(spec, ctx.opts.validity_tol)?;
    rep.tolerances.insert("separability_threshold".into(), we::SEPARABLE_BELOW);
    match separable_decomposition(&w, &ctx.opts)? {
        Separability::Separable(parts) => {
            rep.result("verdict", "separable");
            rep.scalar("noise", parts.noise, we::SEPARABLE_BELOW);
            rep.scalar("residual", parts.residual, 1e-7);
            for (label, q, comp) in &parts.components {
                let key = format!("component-{}", file_label(label));
                rep.scalar(&format!("weight-{}", file_label(label)), *q, 10.0 * ctx.opts.tol);
                let path = ctx.art.write(&format!("{key}.json"), &comp.to_json())?;
                rep.artifact(&key, &path);
            }
        }
        Separability::NotSeparable { witness, value } => {
            rep.result("verdict", "not_separable");
            rep.scalar("witness_value", value, 10.0 * ctx.opts.tol);
            write_witness(ctx, rep, "witness", &witness)?;
        }
    }
    Ok(true)
}

fn decompose(ctx: &Ctx, spec: &str, rep: &mut RunReport) -> Result<bool> {
    rep.input("process", spec);
    let w = load_process(spec, ctx.opts.validity_tol)?;
    if w.layout.parties.len() != 2 || w.op.dim() != 16 {
        return Err(CliError::Domain("the OCB witness needs a bipartite qubit process".into()));
    }
    let d = decompose_witness_ocb();
    let table = born_table(&w, &d.alice, &d.bob)?;
    let exact = estimate_from_probabilities(&d.coefficients, &table)?;
    let sop =
        causalwit::tensor_ops::LabeledOperator::new(PartyLayout::bipartite_qubits().systems(), d.witness.clone())?;
    rep.result("coefficients", &d.coefficients);
    rep.result("probabilities", &table);
    rep.scalar("estimate_exact", exact, 1e-12);
    rep.scalar("witness_value", witness_expectation(&sop, &w.op)?, 1e-12);
    if let Some(shots) = ctx.cli.common.samples {
        let seed = ctx.cli.common.seed;
        rep.input("shots_per_setting", shots);
        rep.input("seed", seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sampled = resample_table(&table, shots as u64, &mut rng)?;
        let est = estimate_from_probabilities(&d.coefficients, &sampled)?;
        let se = standard_error(&d.coefficients, &table, shots as u64)?;
        rep.result("estimate_sampled", json!({ "value": est, "standard_error": se }));
    }
    Ok(true)
}

fn mc_game(ctx: &Ctx, n: usize, seed: u64) -> Result<(GameWitness, f64, f64)> {
    let mut g = chiribella_witness_mc(n, seed, ctx.cli.common.jobs)?;
    g.p_sep = Some(p_succ_sep(&g.op, &ctx.opts)?.value);
    let (_, noise) = game_to_witness(&g, &ctx.opts)?;
    let p = g.p_sep.expect("set above");
    Ok((g, p, noise))
}

fn finite_game(ctx: &Ctx) -> Result<(st::WeightTable, f64, f64, CausalWitness)> {
    let (weights, bound) = optimize_finite_weights(&ctx.opts)?;
    let mut g = finite_witness(&weights)?;
    g.p_sep = Some(bound.value);
    let (wit, noise) = game_to_witness(&g, &ctx.opts)?;
    Ok((weights, bound.value, noise, wit))
}

fn weights_json(w: &st::WeightTable) -> serde_json::Value {
    let names: Vec<String> = st::finite_unitaries().into_iter().map(|(n, _)| n).collect();
    let list = |m: &std::collections::BTreeMap<(usize, usize), f64>| -> Vec<serde_json::Value> {
        m.iter()
            .filter(|(_, q)| **q > 0.0)
            .map(|(&(i, j), q)| json!({ "u_a": names[i], "u_b": names[j], "weight": q }))
            .collect()
    };
    json!({ "commuting": list(&w.commuting), "anticommuting": list(&w.anticommuting) })
}

fn game_cmd(ctx: &Ctx, game: GameKind, spec: &str, rep: &mut RunReport) -> Result<bool> {
    rep.input("game", format!("{game:?}").to_lowercase());
    match game {
        GameKind::Ocb => {
            rep.input("process", spec);
            let w = load_process(spec, ctx.opts.validity_tol)?;
            rep.scalar("p_succ", ocb_game_value(&w)?, 1e-12);
            rep.result("causal_bound", 0.75);
        }
        GameKind::Chiribella => {
            let n = ctx.cli.common.samples.unwrap_or(10_000);
            let seed = ctx.cli.common.seed;
            rep.input("n_samples", n);
            rep.input("seed", seed);
            let (g, p, noise) = mc_game(ctx, n, seed)?;
            let sw = switch_process(&default_psi(), true)?;
            rep.scalar("switch_value", g.value_on(&sw)?, 1e-9);
            rep.scalar("p_sep", p, 10.0 * ctx.opts.tol);
            rep.scalar("noise_tolerance", noise, 10.0 * ctx.opts.tol);
        }
        GameKind::Finite => {
            let (weights, p, noise, wit) = finite_game(ctx)?;
            rep.scalar("p_sep", p, 10.0 * ctx.opts.tol);
            rep.scalar("noise_tolerance", noise, 10.0 * ctx.opts.tol);
            let path = ctx.art.write("finite-weights.json", &weights_json(&weights))?;
            rep.artifact("finite-weights", &path);
            write_witness(ctx, rep, "finite-witness", &wit)?;
        }
    }
    Ok(true)
}

type JsonMatrix = Vec<Vec<[f64; 2]>>;

/// Instruments per party: settings, then outcomes, then CJ matrices on the
/// party's input ⊗ output factors of the full switch.
#[derive(Deserialize)]
struct InstrumentFile {
    #[serde(default)]
    psi: Option<Vec<[f64; 2]>>,
    alice: Vec<Vec<JsonMatrix>>,
    bob: Vec<Vec<JsonMatrix>>,
    charlie: Vec<Vec<JsonMatrix>>,
}

fn parse_party(
    settings: &[Vec<JsonMatrix>],
    name: &str,
    inputs: &[SystemLabel],
    outputs: &[SystemLabel],
) -> Result<Vec<Instrument>> {
    settings
        .iter()
        .enumerate()
        .map(|(k, els)| {
            let elements = els.iter().map(|m| matrix_from_json(m)).collect::<std::result::Result<Vec<CMat>, _>>()?;
            Ok(Instrument { label: format!("{name}{k}"), inputs: inputs.to_vec(), outputs: outputs.to_vec(), elements })
        })
        .collect()
}

fn correlations(ctx: &Ctx, spec: &str, rep: &mut RunReport) -> Result<bool> {
    rep.input("instruments", spec);
    let layout = PartyLayout::switch(false);
    let (a, b, c, psi) = if spec == "random" {
        rep.input("seed", ctx.cli.common.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.cli.common.seed);
        let (a, b, c) = st::random_switch_instruments(&mut rng);
        (a, b, c, default_psi())
    } else {
        let f: InstrumentFile = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
        let p = &layout.parties;
        let psi = match &f.psi {
            Some(v) => CVec::from_iterator(v.len(), v.iter().map(|z| causalwit::tensor_ops::c(z[0], z[1]))),
            None => default_psi(),
        };
        (
            parse_party(&f.alice, "A", &p[0].inputs, &p[0].outputs)?,
            parse_party(&f.bob, "B", &p[1].inputs, &p[1].outputs)?,
            parse_party(&f.charlie, "C", &p[2].inputs, &p[2].outputs)?,
            psi,
        )
    };
    let table = switch_correlations(&a, &b, &c, &psi)?;
    let path = ctx.art.write("correlations.json", &table.to_json())?;
    rep.artifact("correlations", &path);
    let v = check_causal_theorem4(&table, 1e-12, &ctx.opts)?;
    rep.tolerances.insert("z_independence".into(), 1e-12);
    rep.tolerances.insert("mixture".into(), st::MIXTURE_TOL);
    rep.result("verdict", v);
    Ok(true)
}
