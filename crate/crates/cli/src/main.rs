//! `multisrc`: run, calibrate and inspect multi-source testing experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use multisrc::definetti::{probe_exchangeable, probe_product_case, witness_gap};
use multisrc::dist::{error_vectors, verify_structural_condition, Distribution, SourceFamily};
use multisrc::families::{make_definetti_family_with, FamilyKind, FamilySpec, ReferenceSpec, DEFINETTI_C};
use multisrc::harness::{
    calibrate, default_c1, emit_report, ingest_samples, run_sweep, run_trials_detailed, write_output, write_sweep_csv,
    CalibrationRequest, ExperimentConfig, FlatteningMode, HarnessError, IngestFormat, Ingested, OutputFormat, Report,
    SweepGrid, TesterKind,
};
use multisrc::oracles::{
    closeness_moments, collision_soundness_lower_bound, collision_variance, identity_moments, moment_sums,
};
use multisrc::testers::{
    closeness_test, collision_statistic, identity_test, uniformity_threshold, SampleCounts, TesterConfig, Verdict,
};

#[derive(Parser)]
#[command(name = "multisrc", version, about = "Multi-source distribution testing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collision tester against the uniform distribution.
    Uniformity {
        #[command(flatten)]
        common: Common,
        /// Test a CSV of `source_id,value` rows instead of simulating.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Chi-square tester against a known reference.
    Identity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        flatten: Option<FlattenArg>,
        /// Test a CSV of `value,count` rows instead of simulating (needs `--q`).
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Reference distribution as whitespace-separated probabilities.
        #[arg(long)]
        q: Option<PathBuf>,
        /// Planned sample count for file input; defaults to the file's total.
        #[arg(long)]
        s: Option<usize>,
    },
    /// Chi-square tester against a reference known only through samples.
    Closeness {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        flatten: Option<FlattenArg>,
        #[arg(long)]
        k: Option<usize>,
        /// Unequal-size mode: flattening budget for the reference stream.
        #[arg(long)]
        k1: Option<usize>,
        /// Source counts as `value,count` rows (needs `--reference-counts`).
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        reference_counts: Option<PathBuf>,
        #[arg(long)]
        s: Option<usize>,
    },
    /// Smallest c1 on the grid that meets the target error on reference families.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        tester: TesterArg,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        target: f64,
        #[arg(long, value_enum)]
        flatten: Option<FlattenArg>,
        #[arg(long)]
        k1: Option<usize>,
    },
    /// Exact moments and inequality checks for a family.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Family in text form: reference block, then one block per source.
        #[arg(long)]
        family_file: Option<PathBuf>,
    },
    /// Generate a family and print it in text form (or JSON).
    Family {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        s: Option<usize>,
    },
    /// Witness events for the exchangeable construction.
    Definetti {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFINETTI_C)]
        c: f64,
    },
    /// Run an experiment over a grid of n and epsilon values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        tester: Option<TesterArg>,
        #[arg(long, value_enum)]
        flatten: Option<FlattenArg>,
        #[arg(long, value_delimiter = ',')]
        ns: Vec<usize>,
        #[arg(long = "eps-grid", value_delimiter = ',')]
        eps_grid: Vec<f64>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    c1: Option<f64>,
    /// FamilySpec JSON file.
    #[arg(long)]
    family: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long, value_enum)]
    reference: Option<ReferenceArg>,
    /// Cap on the mass each soundness source moves.
    #[arg(long)]
    max_mass: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    threads: Option<usize>,
    /// ExperimentConfig JSON file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TesterArg {
    Uniformity,
    Identity,
    Closeness,
}

impl From<TesterArg> for TesterKind {
    fn from(t: TesterArg) -> Self {
        match t {
            TesterArg::Uniformity => TesterKind::Uniformity,
            TesterArg::Identity => TesterKind::Identity,
            TesterArg::Closeness => TesterKind::Closeness,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FlattenArg {
    None,
    Deterministic,
    Randomized,
}

impl From<FlattenArg> for FlatteningMode {
    fn from(f: FlattenArg) -> Self {
        match f {
            FlattenArg::None => FlatteningMode::None,
            FlattenArg::Deterministic => FlatteningMode::Deterministic,
            FlattenArg::Randomized => FlatteningMode::Randomized,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Uniform,
    IdenticalFar,
    SharedSign,
    MomentMatching,
    Definetti,
}

impl From<KindArg> for FamilyKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Uniform => FamilyKind::Uniform,
            KindArg::IdenticalFar => FamilyKind::IdenticalFar,
            KindArg::SharedSign => FamilyKind::SharedSign,
            KindArg::MomentMatching => FamilyKind::MomentMatching,
            KindArg::Definetti => FamilyKind::Definetti,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Uniform,
    Zipf,
    PointMassHeavy,
}

impl From<ReferenceArg> for ReferenceSpec {
    fn from(r: ReferenceArg) -> Self {
        match r {
            ReferenceArg::Uniform => ReferenceSpec::Uniform,
            ReferenceArg::Zipf => ReferenceSpec::Zipf { exponent: 1.0 },
            ReferenceArg::PointMassHeavy => ReferenceSpec::PointMassHeavy { mass: 0.5 },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

const DEFAULT_N: usize = 400;
const DEFAULT_EPS: f64 = 0.5;
const DEFAULT_TRIALS: u64 = 400;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Uniformity { common, samples } => match samples {
            Some(path) => uniformity_from_file(&common, &path),
            None => experiment(&common, TesterKind::Uniformity, None, None, None),
        },
        Command::Identity {
            common,
            flatten,
            counts,
            q,
            s,
        } => match counts {
            Some(path) => identity_from_file(&common, &path, q.as_deref(), s),
            None => experiment(&common, TesterKind::Identity, flatten, None, None),
        },
        Command::Closeness {
            common,
            flatten,
            k,
            k1,
            counts,
            reference_counts,
            s,
        } => match counts {
            Some(path) => closeness_from_file(&common, &path, reference_counts.as_deref(), s),
            None => experiment(&common, TesterKind::Closeness, flatten, k, k1),
        },
        Command::Calibrate {
            common,
            tester,
            target,
            flatten,
            k1,
        } => calibrate_cmd(&common, tester.into(), target, flatten, k1),
        Command::Oracle { common, family_file } => oracle_cmd(&common, family_file.as_deref()),
        Command::Family { common, s } => family_cmd(&common, s),
        Command::Definetti { common, c } => definetti_cmd(&common, c),
        Command::Sweep {
            common,
            tester,
            flatten,
            ns,
            eps_grid,
        } => {
            let tester = tester.map(TesterKind::from);
            let cfg = build_config(&common, tester, flatten, None, None)?;
            let rows = run_sweep(&cfg, &SweepGrid { ns, epsilons: eps_grid }, common.threads)?;
            let mut buf = Vec::new();
            match format_of(&common, OutputFormat::Csv) {
                OutputFormat::Csv => write_sweep_csv(&mut buf, &rows)?,
                OutputFormat::Json => serde_json::to_writer_pretty(&mut buf, &rows)?,
            }
            write_output(&buf, common.out.as_deref())
        }
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path.display().to_string(), e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    serde_json::from_str(&read(path)?).map_err(|source| HarnessError::JsonFile {
        path: path.display().to_string(),
        source,
    })
}

fn format_of(common: &Common, default: OutputFormat) -> OutputFormat {
    common.format.map(OutputFormat::from).unwrap_or(default)
}

/// Config file, then family file, then flags, each overriding the last.
fn build_config(
    common: &Common,
    tester: Option<TesterKind>,
    flatten: Option<FlattenArg>,
    k: Option<usize>,
    k1: Option<usize>,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let cfg: ExperimentConfig = read_json(path)?;
            if let Some(t) = tester {
                if t != cfg.tester {
                    return Err(HarnessError::IncompatibleConfig(format!(
                        "config file is for the {:?} tester",
                        cfg.tester
                    )));
                }
            }
            cfg
        }
        None => {
            let tester = tester.unwrap_or(TesterKind::Uniformity);
            ExperimentConfig::new(
                tester,
                FamilySpec::new(FamilyKind::Uniform, DEFAULT_N, 0).with_epsilon(DEFAULT_EPS),
                DEFAULT_EPS,
                DEFAULT_TRIALS,
                0,
            )
        }
    };
    if let Some(path) = &common.family {
        cfg.family = read_json(path)?;
    }
    apply_family_flags(common, &mut cfg.family);
    if let Some(eps) = common.eps {
        cfg.epsilon = eps;
        if common.family.is_none() || cfg.family.epsilon == 0.0 {
            cfg.family.epsilon = eps;
        }
    }
    if cfg.family.epsilon == 0.0 {
        cfg.family.epsilon = cfg.epsilon;
    }
    if let Some(c1) = common.c1 {
        cfg.c1 = c1;
    } else if common.config.is_none() {
        cfg.c1 = default_c1(cfg.tester);
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(f) = flatten {
        cfg.flattening = f.into();
    }
    if k.is_some() {
        cfg.k = k;
    }
    if k1.is_some() {
        cfg.k1 = k1;
    }
    if let Some(out) = &common.out {
        cfg.output.path = Some(out.clone());
    }
    if let Some(f) = common.format {
        cfg.output.format = f.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_family_flags(common: &Common, spec: &mut FamilySpec) {
    if let Some(n) = common.n {
        spec.n = n;
    }
    if let Some(kind) = common.kind {
        spec.kind = kind.into();
    }
    if let Some(r) = common.reference {
        spec.reference = r.into();
    }
    if let Some(m) = common.max_mass {
        spec.extra.max_mass = Some(m);
    }
    if common.family.is_none() {
        if let Some(seed) = common.seed {
            spec.seed = seed;
        }
    }
}

fn experiment(
    common: &Common,
    tester: TesterKind,
    flatten: Option<FlattenArg>,
    k: Option<usize>,
    k1: Option<usize>,
) -> Result<(), HarnessError> {
    let cfg = build_config(common, Some(tester), flatten, k, k1)?;
    let (result, _) = run_trials_detailed(&cfg, common.threads)?;
    let format = cfg.output.format;
    let path = cfg.output.path.clone();
    emit_report(&Report::new(cfg, result), format, path.as_deref())
}

fn emit_value(common: &Common, value: &Value, default: OutputFormat) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    match format_of(common, default) {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut buf, value)?;
            buf.push(b'\n');
        }
        OutputFormat::Csv => {
            buf.extend_from_slice(b"metric,value\n");
            let mut rows = Vec::new();
            flatten_value("", value, &mut rows);
            for (k, v) in rows {
                buf.extend_from_slice(format!("{k},{v}\n").as_bytes());
            }
        }
    }
    write_output(&buf, common.out.as_deref())
}

fn flatten_value(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_value(&key, v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten_value(&format!("{prefix}.{i}"), v, out);
            }
        }
        Value::Null => {}
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn tester_config(common: &Common, n: usize, tester: TesterKind) -> Result<TesterConfig, HarnessError> {
    let c1 = common.c1.unwrap_or_else(|| default_c1(tester));
    Ok(TesterConfig::new(n, common.eps.unwrap_or(DEFAULT_EPS), c1)?)
}

fn require_n(common: &Common) -> Result<usize, HarnessError> {
    common
        .n
        .ok_or_else(|| HarnessError::IncompatibleConfig("file input needs --n".into()))
}

fn emit_verdict(common: &Common, v: &Verdict) -> Result<(), HarnessError> {
    emit_value(common, &serde_json::to_value(v)?, OutputFormat::Json)
}

fn uniformity_from_file(common: &Common, path: &Path) -> Result<(), HarnessError> {
    let n = require_n(common)?;
    let cfg = tester_config(common, n, TesterKind::Uniformity)?;
    let Ingested::Samples(table) = ingest_samples(path, IngestFormat::Samples, n)? else {
        unreachable!("samples format yields samples");
    };
    let z = collision_statistic(&table.values)?;
    let counts = SampleCounts {
        sources: table.len() as u64,
        ..Default::default()
    };
    emit_verdict(common, &Verdict::new(z, uniformity_threshold(&cfg), counts))
}

fn read_counts(path: &Path, n: usize) -> Result<multisrc::CountVector, HarnessError> {
    match ingest_samples(path, IngestFormat::Counts, n)? {
        Ingested::Counts(c) => Ok(c),
        Ingested::Samples(_) => unreachable!("counts format yields counts"),
    }
}

fn identity_from_file(common: &Common, path: &Path, q: Option<&Path>, s: Option<usize>) -> Result<(), HarnessError> {
    let q = q.ok_or_else(|| HarnessError::IncompatibleConfig("--counts needs --q".into()))?;
    let q = Distribution::parse_text(&read(q)?)?;
    let cfg = tester_config(common, q.len(), TesterKind::Identity)?;
    let counts = read_counts(path, q.len())?;
    let s = s.unwrap_or(counts.total() as usize);
    emit_verdict(common, &identity_test(&cfg, &q, &counts, s)?)
}

fn closeness_from_file(common: &Common, path: &Path, y: Option<&Path>, s: Option<usize>) -> Result<(), HarnessError> {
    let y = y.ok_or_else(|| HarnessError::IncompatibleConfig("--counts needs --reference-counts".into()))?;
    let n = require_n(common)?;
    let cfg = tester_config(common, n, TesterKind::Closeness)?;
    let t = read_counts(path, n)?;
    let y = read_counts(y, n)?;
    let s = s.unwrap_or(t.total() as usize);
    emit_verdict(common, &closeness_test(&cfg, &t, &y, s)?)
}

fn calibrate_cmd(
    common: &Common,
    tester: TesterKind,
    target: f64,
    flatten: Option<FlattenArg>,
    k1: Option<usize>,
) -> Result<(), HarnessError> {
    let mut req = CalibrationRequest::new(
        tester,
        common.n.unwrap_or(DEFAULT_N),
        common.eps.unwrap_or(DEFAULT_EPS),
        common.trials.unwrap_or(DEFAULT_TRIALS),
        common.seed.unwrap_or(0),
    );
    req.target_error = target;
    if let Some(f) = flatten {
        req.flattening = f.into();
    }
    req.k1 = k1;
    let res = calibrate(&req)?;
    emit_value(common, &serde_json::to_value(&res)?, OutputFormat::Json)
}

fn load_family(common: &Common, family_file: Option<&Path>) -> Result<SourceFamily, HarnessError> {
    if let Some(path) = family_file {
        let mut fam = SourceFamily::parse_text(&read(path)?)?;
        if fam.partition().is_none() {
            // A structural violation is reported by the oracle output, not raised.
            let _ = fam.verify();
        }
        return Ok(fam);
    }
    let mut spec = match &common.family {
        Some(path) => read_json(path)?,
        None => FamilySpec::new(FamilyKind::Uniform, DEFAULT_N, 2),
    };
    apply_family_flags(common, &mut spec);
    if let Some(eps) = common.eps {
        spec.epsilon = eps;
    }
    Ok(spec.generate()?)
}

fn oracle_cmd(common: &Common, family_file: Option<&Path>) -> Result<(), HarnessError> {
    let fam = load_family(common, family_file)?;
    let structural = match verify_structural_condition(&fam) {
        Ok(p) => json!({ "holds": true, "a": p.a(), "b": p.b() }),
        Err(e) => json!({ "holds": false, "reason": e.to_string() }),
    };
    let mut out = json!({
        "n": fam.n(),
        "s": fam.s(),
        "structural": structural,
    });
    let obj = out.as_object_mut().expect("object literal");
    if let Ok(ev) = error_vectors(&fam) {
        obj.insert("source_gaps".into(), json!(ev.l1_gaps));
    }
    if let Ok(m) = collision_variance(&fam) {
        obj.insert(
            "collision".into(),
            json!({
                "expectation": m.expectation,
                "alpha": m.alpha,
                "pair_count_variance": m.variance_exact,
                "pair_count_variance_bound": m.variance_bound,
                "statistic_variance": m.statistic_variance(),
                "bound_holds": m.bound_holds(),
            }),
        );
    }
    if let Some(eps) = common.eps {
        match collision_soundness_lower_bound(&fam, eps) {
            Ok(c) => obj.insert("soundness".into(), serde_json::to_value(c)?),
            Err(e) => obj.insert("soundness".into(), json!({ "skipped": e.to_string() })),
        };
    }
    if let Ok(m) = identity_moments(&fam) {
        obj.insert(
            "identity".into(),
            json!({
                "expectation": m.expectation,
                "variance_exact": m.variance_exact,
                "variance_bound": m.variance_bound,
                "bound_holds": m.bound_holds(),
            }),
        );
    }
    if let Ok(m) = closeness_moments(&fam) {
        obj.insert(
            "closeness".into(),
            json!({
                "expectation": m.expectation,
                "variance_exact": m.variance_exact,
                "variance_bound": m.variance_bound,
                "variance_bound_general": m.variance_bound_general,
                "bound_holds": m.bound_holds(),
            }),
        );
    }
    let sums: Vec<Value> = (1..=4)
        .filter_map(|k| moment_sums(&fam, k).ok())
        .map(|m| json!({ "k": m.k, "direct": m.direct, "expanded": m.expanded, "relative_gap": m.relative_gap() }))
        .collect();
    if !sums.is_empty() {
        obj.insert("lambda_power_sums".into(), Value::Array(sums));
    }
    emit_value(common, &out, OutputFormat::Json)
}

fn family_cmd(common: &Common, s: Option<usize>) -> Result<(), HarnessError> {
    let mut spec = match &common.family {
        Some(path) => read_json(path)?,
        None => FamilySpec::new(FamilyKind::Uniform, DEFAULT_N, 2).with_epsilon(DEFAULT_EPS),
    };
    apply_family_flags(common, &mut spec);
    if let Some(eps) = common.eps {
        spec.epsilon = eps;
    }
    if let Some(s) = s {
        spec.s = s;
    }
    let fam = spec.generate()?;
    let buf = match format_of(common, OutputFormat::Csv) {
        OutputFormat::Json => {
            let mut v = serde_json::to_vec_pretty(&json!({ "spec": spec, "family": fam }))?;
            v.push(b'\n');
            v
        }
        OutputFormat::Csv => fam.to_text().into_bytes(),
    };
    write_output(&buf, common.out.as_deref())
}

fn definetti_cmd(common: &Common, c: f64) -> Result<(), HarnessError> {
    let n = common.n.unwrap_or(10_000);
    let trials = common.trials.unwrap_or(100_000);
    let seed = common.seed.unwrap_or(0);
    let pool = rayon_pool(common.threads)?;
    let run = || -> Result<Value, HarnessError> {
        let fam = make_definetti_family_with(n, c)?;
        let probe = probe_exchangeable(n, c, trials, seed)?;
        // Product laws at the two extremes: uniform on the small set, and a point mass on element 1.
        let mut small = vec![0.0; n];
        for v in small.iter_mut().take(fam.s + 1).skip(1) {
            *v = 1.0 / fam.s as f64;
        }
        let case1 = probe_product_case(&Distribution::new(small)?, fam.s, fam.delta, trials, seed)?;
        let case2 = probe_product_case(&Distribution::point_mass(n, 0)?, fam.s, fam.delta, trials, seed)?;
        let gap = witness_gap(
            probe.e1.probability,
            probe.e2.probability,
            case1.estimate.probability,
            case2.estimate.probability,
        );
        Ok(json!({
            "exchangeable": probe,
            "product_case1": case1,
            "product_case2": case2,
            "witness_gap": gap,
            "master_seed": seed,
        }))
    };
    let value = match pool {
        Some(p) => p.install(run)?,
        None => run()?,
    };
    emit_value(common, &value, OutputFormat::Json)
}

fn rayon_pool(threads: Option<usize>) -> Result<Option<rayon::ThreadPool>, HarnessError> {
    threads
        .map(|t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| HarnessError::IncompatibleConfig(format!("thread pool: {e}")))
        })
        .transpose()
}
