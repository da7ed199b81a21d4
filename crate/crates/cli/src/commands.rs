use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use quadstab::dataset::{read_labeled_csv, write_params_csv, LabelJob, LabeledRow};
use quadstab::ghost::{boundedness_check, Boundedness, StabilityConfig, StabilityLabel};
use quadstab::metrics::{bad_fraction_bins, confusion, write_bins_csv, write_scores_csv, ConfusionCounts, DEFAULT_BINS};
use quadstab::mlp::{accuracy, train, Hyperparams};
use quadstab::nbody::IntegratorConfig;
use quadstab::params::feature_names;
use quadstab::sampler::{sample_row, SamplerConfig};
use quadstab::slices::{bad_fraction_by_slice, find_slice, slice_grid, write_grid_csv, Classifier, SliceSpec, Varied};
use quadstab::{dataset, MLPModel, Topology};
use rayon::prelude::*;

use crate::args::*;
use crate::config::Config;
use crate::UsageError;

pub const MODEL_DIR_ENV: &str = "QUADSTAB_MODEL_DIR";

pub fn run(cmd: Command, cfg: &Config) -> Result<()> {
    match cmd {
        Command::Classify2p2(a) => {
            let flags = [a.qi1, a.qi2, a.qo, a.ali1o, a.ali2o, a.ei1, a.ei2, a.eo, a.ii1i2, a.ii1o, a.ii2o];
            classify(Topology::Quad2p2, &a.common, &flags, cfg)
        }
        Command::Classify3p1(a) => {
            let flags = [a.qi, a.qm, a.qo, a.alim, a.almo, a.ei, a.em, a.eo, a.iim, a.iio, a.imo];
            classify(Topology::Quad3p1, &a.common, &flags, cfg)
        }
        Command::Sample(a) => sample(&a, cfg),
        Command::Label(a) => label(&a, cfg),
        Command::Train(a) => train_cmd(&a, cfg),
        Command::Eval(a) => eval(&a, cfg),
        Command::Slice(a) => slice(&a, cfg),
        Command::Bounded(a) => bounded(&a, cfg),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn topology(run: &RunArgs, cfg: &Config) -> Result<Topology> {
    let name = run.topology.clone().or_else(|| cfg.raw("topology").map(str::to_string));
    let name = name.ok_or_else(|| usage("--topology is required (triple, 2p2 or 3p1)"))?;
    Ok(name.parse()?)
}

fn stability_config(run: &RunArgs, cfg: &Config, default_outer: usize) -> Result<StabilityConfig> {
    let base = IntegratorConfig::default();
    let wall_cap = cfg.pick(run.wall_cap, "wall_cap", base.max_wall_seconds.unwrap_or(0.0))?;
    let integrator = IntegratorConfig {
        rel_tolerance: cfg.pick(run.tolerance, "tolerance", base.rel_tolerance)?,
        max_wall_seconds: (wall_cap > 0.0).then_some(wall_cap),
        max_steps: cfg.pick_opt(run.max_steps, "max_steps")?,
        ..base
    };
    let s = StabilityConfig {
        n_outer: cfg.pick(run.n_outer, "n_outer", default_outer)?,
        integrator,
        ..Default::default()
    };
    if s.n_outer == 0 {
        bail!(usage("--n-outer must be at least 1"));
    }
    Ok(s)
}

/// Runs `f` on a pool of the requested size, or on the global pool.
fn with_threads<R: Send>(run: &RunArgs, cfg: &Config, f: impl FnOnce() -> R + Send) -> Result<R> {
    match cfg.pick_opt(run.threads, "threads")? {
        None => Ok(f()),
        Some(0) => bail!(usage("--threads must be at least 1")),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
    }
}

fn default_model_path(topology: Topology) -> PathBuf {
    let dir = std::env::var_os(MODEL_DIR_ENV).map_or_else(|| PathBuf::from("models"), PathBuf::from);
    dir.join(format!("mlp_{}.json", topology.tag()))
}

fn load_model(path: &Path) -> Result<MLPModel> {
    MLPModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_checked(path: &Path, topology: Topology) -> Result<MLPModel> {
    let model = load_model(path)?;
    let want = feature_names(topology).len();
    if model.n_features() != want {
        bail!(quadstab::Error::Dimension { expected: want, got: model.n_features() });
    }
    Ok(model)
}

/// Documented validity range of each feature, in CLI units.
fn feature_range(name: &str) -> (f64, f64) {
    if name.starts_with("q_") {
        (0.1, 10.0)
    } else if name.starts_with("alpha") {
        (0.01, 1.0)
    } else if name.starts_with("e_") {
        (0.0, 0.95)
    } else {
        (0.0, 180.0)
    }
}

fn classify(topology: Topology, common: &ModelArgs, flags: &[Option<f64>; 11], cfg: &Config) -> Result<()> {
    let path = common.model.clone().or_else(|| cfg.raw("model").map(PathBuf::from)).unwrap_or_else(|| default_model_path(topology));
    let model = load_checked(&path, topology)?;
    if let Some(batch) = &common.batch {
        return classify_batch(topology, &model, batch);
    }
    let names = feature_names(topology);
    let mut x = Vec::with_capacity(11);
    for (&name, v) in names.iter().zip(flags) {
        let v = v.ok_or_else(|| usage(format!("missing value for {name}")))?;
        let (lo, hi) = feature_range(name);
        if !(lo..=hi).contains(&v) {
            eprintln!("warning: {name} = {v} is outside the trained range [{lo}, {hi}]; the verdict is an extrapolation");
        }
        x.push(if name.starts_with("i_") { v * PI / 180.0 } else { v });
    }
    let p = model.forward(&x)?;
    println!("p_unstable: {p:?}");
    println!("verdict: {}", if p >= 0.5 { "unstable" } else { "stable" });
    Ok(())
}

fn classify_batch(topology: Topology, model: &MLPModel, path: &Path) -> Result<()> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = rdr.headers()?.clone();
    let cols: Vec<usize> = feature_names(topology)
        .iter()
        .map(|&n| header.iter().position(|h| h.trim() == n).ok_or_else(|| usage(format!("{}: no `{n}` column", path.display()))))
        .collect::<Result<_>>()?;
    println!("row,p_unstable,verdict");
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let x = cols
            .iter()
            .map(|&c| {
                let s = rec.get(c).unwrap_or("").trim();
                s.parse::<f64>().map_err(|_| usage(format!("{}: row {}: bad number `{s}`", path.display(), k + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let p = model.forward(&x)?;
        println!("{k},{p:?},{}", if p >= 0.5 { "unstable" } else { "stable" });
    }
    Ok(())
}

fn sample(a: &SampleArgs, cfg: &Config) -> Result<()> {
    let topology = topology(&a.run, cfg)?;
    let n: usize = cfg.pick(a.n, "n_systems", 0)?;
    if n == 0 {
        bail!(usage("--n must be at least 1"));
    }
    let seed = cfg.pick(a.run.seed, "seed", 0)?;
    let out = cfg.pick(a.out.clone(), "out", PathBuf::from(format!("{}_params.csv", topology.tag())))?;
    let thinning = topology.is_quadruple() && !a.no_thinning;
    let sampler = SamplerConfig::default();
    let rows = (0..n as u64).map(|i| sample_row(topology, seed, i, thinning, &sampler)).collect::<Result<Vec<_>, _>>()?;
    write_params_csv(&out, topology, &rows)?;
    println!("wrote {n} {topology} systems to {}", out.display());
    Ok(())
}

fn label(a: &LabelArgs, cfg: &Config) -> Result<()> {
    let topology = topology(&a.run, cfg)?;
    let n = cfg.pick(a.n, "n_systems", 0usize)?;
    if n == 0 {
        bail!(usage("--n must be at least 1"));
    }
    let mut job = LabelJob::new(topology, n, cfg.pick(a.run.seed, "seed", 0)?);
    job.stability = stability_config(&a.run, cfg, 100)?;
    let dir = cfg.pick(a.dir.clone(), "dir", PathBuf::from("data"))?;
    let split_seed = cfg.pick(a.split_seed, "split_seed", job.master_seed)?;
    let ds = with_threads(&a.run, cfg, || dataset::label_to_dir(&job, &dir, split_seed))??;
    let unstable = ds.rows.iter().filter(|r| r.record.label.is_unstable()).count();
    println!(
        "{topology}: {} labeled ({unstable} unstable), {} timeouts ({:.2}%) in {}",
        ds.rows.len(),
        ds.timeouts.len(),
        100.0 * ds.timeout_fraction(),
        dir.display()
    );
    Ok(())
}

fn xy(rows: &[LabeledRow]) -> (Vec<Vec<f64>>, Vec<f64>) {
    (rows.iter().map(|r| r.params.features()).collect(), rows.iter().map(LabeledRow::target).collect())
}

fn train_cmd(a: &TrainArgs, cfg: &Config) -> Result<()> {
    let data = cfg.pick_opt(a.data.clone(), "data")?.ok_or_else(|| usage("--data is required"))?;
    let (topology, rows) = read_labeled_csv(&data)?;
    let (xs, ys) = xy(&rows);
    let mut hyper = Hyperparams::default();
    hyper.max_epochs = cfg.pick(a.max_epochs, "max_epochs", hyper.max_epochs)?;
    let seed = cfg.pick(a.seed, "seed", 0)?;
    let mut model = train(&xs, &ys, &hyper, seed)?;
    model.info.topology = Some(topology.tag().to_string());
    model.info.train_score = Some(accuracy(&model, &xs, &ys)?);
    if let Some(test) = cfg.pick_opt(a.test.clone(), "test")? {
        let (t, rows) = read_labeled_csv(&test)?;
        if t != topology {
            bail!(usage(format!("test file is {t}, training file is {topology}")));
        }
        let (xt, yt) = xy(&rows);
        model.info.test_score = Some(accuracy(&model, &xt, &yt)?);
    }
    let out = cfg.pick(a.out.clone(), "out", default_model_path(topology))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    model.save(&out)?;
    let fmt = |s: Option<f64>| s.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{topology}: {} rows, {} epochs, train score {}, test score {}, saved to {}",
        xs.len(),
        model.info.epochs_run,
        fmt(model.info.train_score),
        fmt(model.info.test_score),
        out.display()
    );
    Ok(())
}

fn eval(a: &EvalArgs, cfg: &Config) -> Result<()> {
    let data = cfg.pick_opt(a.data.clone(), "data")?.ok_or_else(|| usage("--data is required"))?;
    let (topology, rows) = read_labeled_csv(&data)?;
    let model = cfg.pick_opt(a.model.clone(), "model")?.map(|p| load_checked(&p, topology)).transpose()?;
    let triple = cfg.pick_opt(a.triple_model.clone(), "triple_model")?.map(|p| load_checked(&p, Topology::Triple)).transpose()?;
    let out_dir = cfg.pick(a.out_dir.clone(), "out_dir", PathBuf::from("eval"))?;
    let n_bins = cfg.pick(a.bins, "bins", DEFAULT_BINS)?;
    std::fs::create_dir_all(&out_dir)?;

    let mut classifiers: Vec<(String, Classifier)> = vec![("ma01".into(), Classifier::Ma01)];
    if let Some(m) = &triple {
        classifiers.push(("triple_mlp".into(), Classifier::TripleMlp(m)));
    }
    if let Some(m) = &model {
        classifiers.push((format!("{}_mlp", topology.tag()), Classifier::QuadMlp(m)));
    }
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.params.features()).collect();
    let truth: Vec<bool> = rows.iter().map(|r| r.record.label.is_unstable()).collect();
    let mut preds: Vec<(String, Vec<bool>)> = Vec::new();
    for (name, c) in &classifiers {
        let p = xs.iter().map(|x| c.predict_unstable(topology, x)).collect::<Result<Vec<_>, _>>()?;
        preds.push((name.clone(), p));
    }
    if a.include_truth {
        preds.push(("truth".into(), truth.clone()));
    }

    let mut table: Vec<(String, ConfusionCounts)> = Vec::new();
    for (name, p) in &preds {
        table.push((name.clone(), confusion(&truth, p)?));
        let sets = feature_names(topology)
            .iter()
            .map(|&f| Ok((f.to_string(), bad_fraction_bins(topology, &xs, &truth, p, f, n_bins)?)))
            .collect::<Result<Vec<_>>>()?;
        write_bins_csv(&out_dir.join(format!("bins_{name}.csv")), &sets)?;
    }
    write_scores_csv(&out_dir.join("scores.csv"), &table)?;

    println!("{topology}: {} systems", rows.len());
    println!(
        "{:<12} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "classifier", "TS", "TU", "FS", "FU", "S", "Ps", "Pu", "Rs", "Ru"
    );
    for (name, c) in &table {
        let s = c.scores().as_array().map(|v| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}")));
        println!(
            "{name:<12} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            c.ts, c.tu, c.fs, c.fu, s[0], s[1], s[2], s[3], s[4]
        );
    }
    Ok(())
}

fn slice(a: &SliceArgs, cfg: &Config) -> Result<()> {
    let topology = topology(&a.run, cfg)?;
    if !topology.is_quadruple() {
        bail!(usage("slices are defined for 2p2 and 3p1 only"));
    }
    let name = cfg.pick_opt(a.name.clone(), "name")?.ok_or_else(|| usage("--name is required"))?;
    let row = find_slice(topology, &name.to_ascii_lowercase())?;
    let n = cfg.pick(a.grid, "grid", 10usize)?;
    let varied: Vec<Varied> = match a.varied.as_str() {
        "both" => vec![Varied::MassRatio, Varied::Eccentricity],
        v => vec![v.parse()?],
    };
    let model = cfg.pick_opt(a.model.clone(), "model")?.map(|p| load_checked(&p, topology)).transpose()?;
    let triple = cfg.pick_opt(a.triple_model.clone(), "triple_model")?.map(|p| load_checked(&p, Topology::Triple)).transpose()?;
    let mut classifiers = vec![Classifier::Ma01];
    classifiers.extend(triple.as_ref().map(Classifier::TripleMlp));
    classifiers.extend(model.as_ref().map(Classifier::QuadMlp));
    let stability = stability_config(&a.run, cfg, 100)?;
    let out_dir = cfg.pick(a.out_dir.clone(), "out_dir", PathBuf::from("slices"))?;
    std::fs::create_dir_all(&out_dir)?;

    for v in varied {
        let spec = SliceSpec::new(row.clone(), v, n, n);
        let grid = with_threads(&a.run, cfg, || slice_grid(&spec, &classifiers, &stability))??;
        let path = out_dir.join(format!("slice_{}_{}_{}.csv", topology.tag(), row.name, v.as_str()));
        write_grid_csv(&path, &grid)?;
        let fractions = bad_fraction_by_slice(&grid);
        let summary: Vec<String> = grid
            .classifiers
            .iter()
            .zip(fractions)
            .map(|(c, f)| format!("{c} {}", f.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))))
            .collect();
        println!(
            "{topology} {} {}-varied: {} cells, {} timeouts, bad fraction: {} -> {}",
            row.name,
            v.as_str(),
            grid.cells.len(),
            grid.timeouts(),
            summary.join(", "),
            path.display()
        );
    }
    Ok(())
}

fn bounded(a: &BoundedArgs, cfg: &Config) -> Result<()> {
    let data = cfg.pick_opt(a.data.clone(), "data")?.ok_or_else(|| usage("--data is required"))?;
    let (topology, rows) = read_labeled_csv(&data)?;
    let n = cfg.pick(a.n, "n_systems", 200usize)?;
    let stability = stability_config(&a.run, cfg, 1000)?;
    let want = |l: StabilityLabel| if a.unstable { l.is_unstable() } else { l == StabilityLabel::Stable };
    let picked: Vec<&LabeledRow> = rows.iter().filter(|r| want(r.record.label)).take(n).collect();
    if picked.is_empty() {
        bail!(usage("no matching systems in the data file"));
    }
    let results = with_threads(&a.run, cfg, || {
        picked
            .par_iter()
            .map(|r| boundedness_check(r.params.spec(), stability.n_outer, &stability.integrator))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let out = cfg.pick(a.out.clone(), "out", PathBuf::from(format!("{}_bounded.csv", topology.tag())))?;
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["index", "label", "outcome"])?;
    for (r, b) in picked.iter().zip(&results) {
        let outcome = match b {
            Boundedness::Bound => "bound",
            Boundedness::Unbound => "unbound",
            Boundedness::Timeout => "timeout",
        };
        w.write_record([r.index.to_string(), r.record.label.to_string(), outcome.to_string()])?;
    }
    w.flush()?;
    let count = |k: Boundedness| results.iter().filter(|&&b| b == k).count();
    let (bound, unbound) = (count(Boundedness::Bound), count(Boundedness::Unbound));
    let decided = bound + unbound;
    println!(
        "{topology}: {bound} bound, {unbound} unbound, {} timeouts after {} outer orbits; bound fraction {}",
        count(Boundedness::Timeout),
        stability.n_outer,
        if decided > 0 { format!("{:.3}", bound as f64 / decided as f64) } else { "-".into() }
    );
    Ok(())
}
