use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sketchmix::bounds::{
    covering_bound_gauss, covering_bound_gmm, domination_constant, implied_failure_prob,
    sketch_size_gmm, sketch_size_single_gauss, LogValue, ParamDomain, SketchSize,
};
use sketchmix::eval::{gen_synthetic_with, kl_sym_mc, mmd_mc, WeightMode};
use sketchmix::freqdesign::{design_frequencies, EstimParams};
use sketchmix::io::{self as skio, DataReader};
use sketchmix::model::mixture_sample;
use sketchmix::sketch::{reduce_chunks, sketch_empirical, sketch_merge, TreeReducer};
use sketchmix::{Algorithm, Dataset, FrequencyKind, RecoveryConfig, SeedStream, SketchAccumulator};

use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path, RunManifest};
use crate::{
    BoundsArgs, BoundsCommand, Command, EstimateArgs, EvalCommand, FreqArgs, GenArgs, KlArgs,
    MergeArgs, MmdArgs, ReplayArgs, SketchArgs, SweepArgs,
};

/// Rows drawn per block when writing generated data.
const GEN_BLOCK: usize = 1 << 16;

pub const SWEEP_HEADER: [&str; 7] = ["d", "K", "m", "seed", "kl", "mmd", "wall_ms"];

pub fn dispatch(command: Command, argv: &[String]) -> CliResult<()> {
    let start = Instant::now();
    let record =
        |name: &str, params: &dyn erased::Params, seed, inputs, outputs| -> CliResult<()> {
            RunManifest::new(
                name,
                argv,
                params.to_value()?,
                seed,
                inputs,
                outputs,
                start.elapsed(),
            )
            .save()
        };
    match command {
        Command::Gen(a) => {
            gen(&a)?;
            record(
                "gen",
                &a,
                Some(a.seed),
                vec![],
                vec![a.out.clone(), a.model_out.clone()],
            )
        }
        Command::Freq(a) => {
            freq(&a)?;
            record(
                "freq",
                &a,
                Some(a.seed),
                vec![a.data.clone()],
                vec![a.out.clone()],
            )
        }
        Command::Sketch(a) => {
            sketch(&a)?;
            record(
                "sketch",
                &a,
                None,
                vec![a.data.clone(), a.freqs.clone()],
                vec![a.out.clone()],
            )
        }
        Command::Merge(a) => {
            merge(&a)?;
            record("merge", &a, None, a.inputs.clone(), vec![a.out.clone()])
        }
        Command::Estimate(a) => {
            estimate(&a)?;
            record(
                "estimate",
                &a,
                Some(a.seed),
                vec![a.sketch.clone(), a.freqs.clone()],
                vec![a.out.clone()],
            )
        }
        Command::Eval(EvalCommand::Kl(a)) => eval_kl(&a),
        Command::Eval(EvalCommand::Mmd(a)) => eval_mmd(&a),
        Command::Bounds(BoundsCommand::Gmm(a)) => bounds(&a, false),
        Command::Bounds(BoundsCommand::Gauss(a)) => bounds(&a, true),
        Command::Sweep(a) => sweep(&a, argv),
        Command::Replay(a) => replay(&a),
    }
}

/// Object-safe serialization of the argument structs.
mod erased {
    pub trait Params {
        fn to_value(&self) -> serde_json::Result<serde_json::Value>;
    }

    impl<T: serde::Serialize> Params for T {
        fn to_value(&self) -> serde_json::Result<serde_json::Value> {
            serde_json::to_value(self)
        }
    }
}

fn to_usize(v: u64, name: &str) -> CliResult<usize> {
    usize::try_from(v).map_err(|_| CliError::usage(format!("--{name} {v} is too large")))
}

fn parse_kind(s: &str) -> CliResult<FrequencyKind> {
    match s {
        "gauss" => Ok(FrequencyKind::Gaussian),
        "fgr" => Ok(FrequencyKind::FoldedGaussianRadius),
        "ar" => Ok(FrequencyKind::AdaptedRadius),
        other => Err(CliError::usage(format!("unknown frequency kind '{other}'"))),
    }
}

fn parse_algo(s: &str) -> CliResult<Algorithm> {
    s.parse()
        .map_err(|_| CliError::usage(format!("unknown algorithm '{s}'")))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        CliError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn gen(a: &GenArgs) -> CliResult<()> {
    let d = to_usize(a.dim, "dim")?;
    let k = to_usize(a.components, "components")?;
    let mode = if a.weights == "dirichlet" {
        WeightMode::FlatDirichlet
    } else {
        WeightMode::Uniform
    };
    let truth = gen_synthetic_with(d, k, a.seed, mode)?.truth;
    let mut rng = SeedStream::new(a.seed).child(1).rng();
    let mut w = create(&a.out)?;
    skio::write_data_header(&mut w, d, a.samples)?;
    let mut left = a.samples;
    while left > 0 {
        let block = left.min(GEN_BLOCK as u64) as usize;
        let rows = mixture_sample(&truth, block, &mut rng)?;
        skio::write_data_rows(&mut w, rows.as_slice())?;
        left -= block as u64;
    }
    w.flush()?;
    skio::save_gmm(&a.model_out, &truth)?;
    Ok(())
}

fn freq(a: &FreqArgs) -> CliResult<()> {
    let mut reader = DataReader::open(&a.data)?;
    let n0 = to_usize(a.n0, "n0")?;
    let head = reader
        .next_chunk(n0)?
        .ok_or_else(|| sketchmix::Error::Format {
            what: "data file",
            reason: "no samples".into(),
        })?;
    let data = Dataset::new(reader.dim(), head)?;
    let params = EstimParams {
        n0: data.len(),
        m0: to_usize(a.m0, "m0")?,
        blocks: to_usize(a.blocks, "blocks")?,
        rounds: to_usize(a.iters, "iters")?,
    };
    let fs = design_frequencies(
        &data,
        to_usize(a.m, "m")?,
        parse_kind(&a.kind)?,
        params,
        a.seed,
    )?;
    skio::save_frequencies(&a.out, &fs)?;
    Ok(())
}

fn sketch(a: &SketchArgs) -> CliResult<()> {
    let fs = skio::load_frequencies(&a.freqs)?;
    let mut reader = DataReader::open(&a.data)?;
    if reader.dim() != fs.dim() {
        return Err(sketchmix::Error::DimensionMismatch {
            expected: fs.dim(),
            found: reader.dim(),
        }
        .into());
    }
    let chunk = to_usize(a.chunk_size, "chunk-size")?;
    // One block feeds every worker a chunk; chunk boundaries do not depend on the
    // thread count, so the result is identical for any pool size.
    let block = chunk.saturating_mul(rayon::current_num_threads().max(1));
    let mut reducer = TreeReducer::new();
    while let Some(rows) = reader.next_chunk(block)? {
        reduce_chunks(&fs, &rows, chunk, &mut reducer)?;
    }
    let acc = reducer
        .finish()?
        .unwrap_or_else(|| SketchAccumulator::new(&fs));
    skio::save_sketch(&a.out, &acc.finalize())?;
    Ok(())
}

fn merge(a: &MergeArgs) -> CliResult<()> {
    let mut inputs = a.inputs.iter();
    let first = inputs
        .next()
        .ok_or_else(|| CliError::usage("merge needs at least one input"))?;
    let mut acc = skio::load_sketch(first)?;
    for path in inputs {
        acc = sketch_merge(&acc, &skio::load_sketch(path)?)?;
    }
    skio::save_sketch(&a.out, &acc)?;
    Ok(())
}

fn estimate(a: &EstimateArgs) -> CliResult<()> {
    let algo = parse_algo(&a.algo)?;
    let sk = skio::load_sketch(&a.sketch)?;
    let fs = skio::load_frequencies(&a.freqs)?;
    sk.check_frequencies(&fs)?;
    let mut cfg = RecoveryConfig::new(to_usize(a.k, "k")?, algo).with_seed(a.seed);
    cfg.max_inner_iters = to_usize(a.max_iters, "max-iters")?;
    cfg.step1_restarts = to_usize(a.restarts, "restarts")?;
    let mix = sketchmix::recovery::recover(&sk, &fs, &cfg)?;
    skio::save_gmm(&a.out, &mix)?;
    Ok(())
}

fn eval_kl(a: &KlArgs) -> CliResult<()> {
    let truth = skio::load_gmm(&a.truth)?;
    let est = skio::load_gmm(&a.est)?;
    let kl = kl_sym_mc(&truth, &est, to_usize(a.samples, "samples")?, a.seed)?;
    if kl.clamped > 0 {
        eprintln!("warning: {} log-densities were clamped", kl.clamped);
    }
    println!("kl_sym {:.16e} {:.16e}", kl.value, kl.stderr);
    Ok(())
}

fn eval_mmd(a: &MmdArgs) -> CliResult<()> {
    let truth = skio::load_gmm(&a.truth)?;
    let est = skio::load_gmm(&a.est)?;
    let sigma2 = a.sigma2.unwrap_or_else(|| truth.mean_variance());
    let r = mmd_mc(
        &truth,
        &est,
        sigma2,
        parse_kind(&a.kind)?,
        to_usize(a.m, "m")?,
        a.seed,
    )?;
    println!("mmd {:.16e} {:.16e}", r.value, r.stderr);
    Ok(())
}

/// Chebyshev radius of `{‖μ‖ ≤ M} × [σ²_min, σ²_max]^d`.
fn default_radius(a: &BoundsArgs) -> f64 {
    let half = (a.sigma2_max - a.sigma2_min) / 2.0;
    (a.mean_bound.powi(2) + a.dim as f64 * half * half).sqrt()
}

fn print_log(label: &str, v: LogValue) {
    match v.linear() {
        Some(x) => println!("{label} {x:.16e}"),
        None => println!("{label} inf"),
    }
    println!("log_{label} {:.16e}", v.log);
}

fn bounds(a: &BoundsArgs, single: bool) -> CliResult<()> {
    let d = to_usize(a.dim, "dim")?;
    let k = to_usize(a.k, "k")?;
    if single && k != 1 {
        return Err(CliError::usage(
            "bounds gauss applies to a single Gaussian; use --k 1",
        ));
    }
    let dom = ParamDomain::new(
        d,
        a.sigma2_min,
        a.sigma2_max,
        a.mean_bound,
        a.radius.unwrap_or_else(|| default_radius(a)),
    )?;
    let eps = a.eta * a.eta / 24.0;
    let (size, log_n): (SketchSize, f64) = if single {
        (
            sketch_size_single_gauss(&dom, a.a, a.eta, a.rho)?,
            covering_bound_gauss(&dom, eps)?.log,
        )
    } else {
        (
            sketch_size_gmm(&dom, k, a.eta, a.rho)?,
            covering_bound_gmm(&dom, k, eps)?.log,
        )
    };
    let implied = implied_failure_prob(log_n, size.log_a, size.m as f64);
    println!("m_lower_bound {}", size.m);
    println!("m_lower_bound_unrounded {:.16e}", size.value);
    println!("log_covering_number {:.16e}", log_n);
    print_log("D", domination_constant(&dom, a.a)?);
    println!("A_branch {}", size.branch.name());
    println!("implied_rho {:.16e}", implied.log.exp());
    Ok(())
}

#[derive(Debug, PartialEq, Serialize, serde::Deserialize)]
struct SweepSettings {
    samples: u64,
    algo: String,
    kind: String,
    kl_samples: u64,
    mmd_m: u64,
}

impl SweepSettings {
    fn of(a: &SweepArgs) -> Self {
        SweepSettings {
            samples: a.samples,
            algo: a.algo.clone(),
            kind: a.kind.clone(),
            kl_samples: a.kl_samples,
            mmd_m: a.mmd_m,
        }
    }
}

type RowKey = (u64, u64, u64, u64);

/// Sketch size for a multiple of the parameter count `(2d+1)K`.
pub fn sweep_m(d: u64, k: u64, factor: f64) -> u64 {
    ((factor * ((2 * d + 1) * k) as f64).round() as u64).max(1)
}

/// Rows already present in a table produced with the same settings.
fn completed_rows(a: &SweepArgs, settings: &SweepSettings) -> CliResult<HashSet<RowKey>> {
    let mut done = HashSet::new();
    if !a.out.exists() {
        return Ok(done);
    }
    let mpath = manifest_path(&a.out);
    if !mpath.exists() {
        return Err(CliError::usage(format!(
            "{} exists without a manifest; refusing to resume",
            a.out.display()
        )));
    }
    let prev = RunManifest::load(&mpath)?;
    let prev_settings: SweepSettings =
        serde_json::from_value(prev.params.get("settings").cloned().unwrap_or_default())
            .map_err(|_| CliError::usage("existing sweep manifest has no settings"))?;
    if prev.command != "sweep" || &prev_settings != settings {
        return Err(CliError::usage(format!(
            "{} was produced with different sweep settings; choose another --out",
            a.out.display()
        )));
    }
    let mut rdr = csv::Reader::from_path(&a.out)?;
    for rec in rdr.records() {
        // A torn last line from an interrupted run is recomputed.
        let Ok(rec) = rec else { continue };
        let field = |i: usize| rec.get(i).and_then(|s| s.parse::<u64>().ok());
        if let (Some(d), Some(k), Some(m), Some(s)) = (field(0), field(1), field(2), field(3)) {
            if rec.len() == SWEEP_HEADER.len() {
                done.insert((d, k, m, s));
            }
        }
    }
    Ok(done)
}

struct SweepRow {
    kl: f64,
    mmd: f64,
}

fn sweep_point(a: &SweepArgs, d: u64, k: u64, m: u64, seed: u64) -> sketchmix::Result<SweepRow> {
    let (du, ku) = (d as usize, k as usize);
    let stream = SeedStream::new(seed);
    let truth = gen_synthetic_with(du, ku, seed, WeightMode::Uniform)?.truth;
    let data = mixture_sample(&truth, a.samples as usize, &mut stream.child(1).rng())?;
    let kind = parse_kind(&a.kind).map_err(|e| sketchmix::Error::InvalidArgument(e.to_string()))?;
    let fs = design_frequencies(
        &data,
        m as usize,
        kind,
        EstimParams::defaults_for(data.len()),
        stream.child(2).seed(),
    )?;
    let sk = sketch_empirical(&data, &fs, sketchmix::sketch::DEFAULT_CHUNK_SIZE)?;
    let algo: Algorithm = a.algo.parse()?;
    let est = sketchmix::recovery::recover(
        &sk,
        &fs,
        &RecoveryConfig::new(ku, algo).with_seed(stream.child(3).seed()),
    )?;
    let kl = kl_sym_mc(&truth, &est, a.kl_samples as usize, stream.child(4).seed())?;
    let mmd = mmd_mc(
        &truth,
        &est,
        truth.mean_variance(),
        kind,
        a.mmd_m as usize,
        stream.child(5).seed(),
    )?;
    Ok(SweepRow {
        kl: kl.value,
        mmd: mmd.value,
    })
}

fn sweep(a: &SweepArgs, argv: &[String]) -> CliResult<()> {
    let start = Instant::now();
    parse_algo(&a.algo)?;
    parse_kind(&a.kind)?;
    if a.dims.contains(&0) || a.ks.contains(&0) {
        return Err(CliError::usage(
            "dimensions and component counts must be at least 1",
        ));
    }
    if a.m_factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(CliError::usage("m factors must be positive"));
    }
    let settings = SweepSettings::of(a);
    let done = completed_rows(a, &settings)?;
    let params = serde_json::json!({ "args": a, "settings": settings });
    let manifest = |elapsed| {
        RunManifest::new(
            "sweep",
            argv,
            params.clone(),
            None,
            vec![],
            vec![a.out.clone()],
            elapsed,
        )
    };

    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&a.out)?;
    let fresh = file.metadata()?.len() == 0;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    if fresh {
        w.write_record(SWEEP_HEADER)?;
        w.flush()?;
    }
    // Saved before any row so an interrupted run can be resumed.
    manifest(start.elapsed()).save()?;

    for &d in &a.dims {
        for &k in &a.ks {
            for &factor in &a.m_factors {
                let m = sweep_m(d, k, factor);
                for &seed in &a.seeds {
                    if done.contains(&(d, k, m, seed)) {
                        continue;
                    }
                    let t0 = Instant::now();
                    let row = sweep_point(a, d, k, m, seed).unwrap_or_else(|e| {
                        eprintln!("warning: d={d} K={k} m={m} seed={seed}: {e}");
                        SweepRow {
                            kl: f64::NAN,
                            mmd: f64::NAN,
                        }
                    });
                    let wall = t0.elapsed().as_millis();
                    w.write_record([
                        d.to_string(),
                        k.to_string(),
                        m.to_string(),
                        seed.to_string(),
                        format!("{:.16e}", row.kl),
                        format!("{:.16e}", row.mmd),
                        wall.to_string(),
                    ])?;
                    w.flush()?;
                }
            }
        }
    }
    manifest(start.elapsed()).save()
}

fn replay(a: &ReplayArgs) -> CliResult<()> {
    let m = RunManifest::load(&a.manifest)?;
    if m.argv.first().map(String::as_str) == Some("replay") {
        return Err(CliError::usage("a replay manifest cannot be replayed"));
    }
    crate::run_argv(&m.argv)
}
