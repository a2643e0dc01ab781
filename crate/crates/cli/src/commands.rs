use crate::args::*;
use crate::failure::{ensure_finite, CliResult, Failure};
use rand::Rng;
use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use topood_core::bnn::{
    forward_with_activations, train, GaussianPosterior, MlpArchitecture, ModelSnapshot,
    ScaleMixturePrior, TrainConfig, TrainOutcome, DEPTH_GRID,
};
use topood_core::data::{
    augment_gaussian, load_idx, load_idx_images, preprocess_rgb32, read_maybe_gzip, save_idx,
    shift_apply, ImageDataset, ShiftSpec, NUM_CLASSES, RGB_LEN, RGB_SIDE,
};
use topood_core::oodtest::{
    permutation_test, robustness_sweep, write_curves_csv, PermutationConfig,
    PermutationTestResult, PowerConfig,
};
use topood_core::ptu::{
    ptu_batch, ptu_batch_breakdown, sample_draws, write_breakdown_csv, DrawSharing, PtuBreakdown,
    PtuMeta, PtuSampleSet,
};
use topood_core::rng::{child_seed, substream};
use topood_core::stability::{empirical_lipschitz_check, layer_constants, LipschitzForm};
use topood_core::topology::{layer_diagrams, write_diagrams_csv};

pub fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Train(a) => train_cmd(&a),
        Command::Convert(a) => convert_cmd(&a),
        Command::Ptu(a) => ptu_cmd(&a),
        Command::OodTest(a) => ood_test_cmd(&a),
        Command::PowerCurve(a) => power_curve_cmd(&a),
        Command::ArchSweep(a) => arch_sweep_cmd(&a),
        Command::Stability(a) => stability_cmd(&a),
    }
}

/// `<primary>.meta.json`: tool, version, command and the effective options.
/// Kept apart from the primary outputs so those stay byte-identical across
/// worker counts.
#[derive(Serialize)]
struct Sidecar<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a C,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

fn write_sidecar<C: Serialize>(
    primary: &Path,
    command: &str,
    config: &C,
    outputs: &[&Path],
    summary: serde_json::Value,
) -> CliResult {
    let sidecar = Sidecar {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        summary,
    };
    let path = suffixed(primary, ".meta.json");
    fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n")
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn check_workers(run: &RunArgs) -> CliResult {
    if run.workers == 0 {
        return Err(Failure::config("--workers must be at least 1"));
    }
    Ok(())
}

fn window(len: usize, src: &ImageSource) -> CliResult<(usize, usize)> {
    if src.offset >= len {
        return Err(Failure::data(format!(
            "{}: offset {} is past the {len} images",
            src.images.display(),
            src.offset
        )));
    }
    let end = src.limit.map_or(len, |n| src.offset.saturating_add(n).min(len));
    if end == src.offset {
        return Err(Failure::config("--limit must be at least 1"));
    }
    Ok((src.offset, end))
}

fn load_images(src: &ImageSource) -> CliResult<Vec<Vec<f64>>> {
    let mut all = load_idx_images(&src.images)?;
    let (start, end) = window(all.len(), src)?;
    all.truncate(end);
    Ok(all.split_off(start))
}

fn load_labelled(src: &ImageSource, labels: &Path) -> CliResult<ImageDataset> {
    let all = load_idx(&src.images, labels)?;
    let (start, end) = window(all.len(), src)?;
    Ok(all.slice(start, end - start))
}

/// Exactly `n` images starting at `offset`.
fn load_exact(images: &Path, offset: usize, n: usize) -> CliResult<Vec<Vec<f64>>> {
    let xs = load_images(&ImageSource { images: images.to_owned(), offset, limit: Some(n) })?;
    if xs.len() != n {
        return Err(Failure::data(format!(
            "{}: only {} images from offset {offset}, {n} needed",
            images.display(),
            xs.len()
        )));
    }
    Ok(xs)
}

fn model_id(path: &Path) -> String {
    let name = path.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    name.strip_suffix(".json").map_or(name.clone(), str::to_owned)
}

fn load_model(path: &Path) -> CliResult<GaussianPosterior> {
    let post = ModelSnapshot::load(path)
        .and_then(|s| s.posterior())
        .map_err(|e| Failure::from(e).context(path.display()))?;
    Ok(post)
}

fn train_config(t: &TrainingArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: t.batch_size,
        learning_rate: t.lr,
        max_epochs: t.max_epochs,
        patience: t.patience,
        mc_samples: t.mc_samples,
        val_fraction: t.val_fraction,
        seed,
    }
}

fn prior(t: &TrainingArgs) -> CliResult<ScaleMixturePrior> {
    let p = ScaleMixturePrior { sigma1: t.prior_sigma1, sigma2: t.prior_sigma2, pi_mix: t.prior_pi };
    if !p.is_valid() {
        return Err(Failure::config(format!(
            "prior needs 0 < pi <= 1 and sigma1 > sigma2 > 0, got pi={} sigma1={} sigma2={}",
            p.pi_mix, p.sigma1, p.sigma2
        )));
    }
    Ok(p)
}

/// Trains and returns the snapshot; augmentation noise comes from its own
/// stream so that it does not shift the training streams.
fn fit(
    arch: &MlpArchitecture,
    t: &TrainingArgs,
    data: &ImageDataset,
    seed: u64,
) -> CliResult<(TrainOutcome, ModelSnapshot)> {
    let prior = prior(t)?;
    let cfg = train_config(t, seed);
    let augmented;
    let data = match t.augment_mu {
        Some(mu) if !mu.is_finite() => return Err(Failure::config("--augment-mu must be finite")),
        Some(mu) => {
            augmented = augment_gaussian(data, mu, &mut substream(child_seed(seed, 1), 0));
            &augmented
        }
        None => data,
    };
    let outcome = train(arch, &prior, data, &cfg)?;
    let snapshot = ModelSnapshot::new(&outcome.posterior, &prior, Some(cfg));
    Ok((outcome, snapshot))
}

fn write_metrics(path: &Path, outcome: &TrainOutcome) -> CliResult {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    for m in &outcome.history {
        wtr.serialize(m)?;
    }
    wtr.flush()?;
    Ok(())
}

fn save_snapshot(path: &Path, snapshot: &ModelSnapshot) -> CliResult {
    let mut out = create(path)?;
    out.write_all(snapshot.to_json().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> CliResult {
    check_workers(&a.run)?;
    let arch = MlpArchitecture::from_name_or_spec(&a.arch)?;
    let data = load_labelled(&a.data, &a.training.labels)?;
    let (outcome, snapshot) = fit(&arch, &a.training, &data, a.run.seed)?;
    let metrics = a.metrics.clone().unwrap_or_else(|| suffixed(&a.out, ".metrics.csv"));
    save_snapshot(&a.out, &snapshot)?;
    write_metrics(&metrics, &outcome)?;
    let last = outcome.history.last();
    eprintln!(
        "trained {} on {} samples: {} epochs, kept epoch {}",
        a.arch,
        data.len(),
        outcome.history.len(),
        outcome.best_epoch
    );
    write_sidecar(
        &a.out,
        "train",
        a,
        &[&a.out, &metrics],
        serde_json::json!({
            "samples": data.len(),
            "epochs": outcome.history.len(),
            "best_epoch": outcome.best_epoch,
            "final_val_accuracy": last.map(|m| m.val_accuracy),
        }),
    )
}

fn convert_cmd(a: &ConvertArgs) -> CliResult {
    check_workers(&a.run)?;
    let bytes = read_maybe_gzip(&a.input)?;
    let plane = RGB_SIDE * RGB_SIDE;
    let record = match a.layout {
        RgbLayout::Cifar => RGB_LEN + 1,
        RgbLayout::Hwc => RGB_LEN,
    };
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Failure::data(format!(
            "{}: {} bytes is not a whole number of {record}-byte records",
            a.input.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / record;
    let mut labels = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for rec in bytes.chunks(record) {
        let hwc: Vec<f64> = match a.layout {
            RgbLayout::Cifar => {
                labels.push(rec[0]);
                let planes = &rec[1..];
                (0..plane)
                    .flat_map(|p| (0..3).map(move |c| planes[c * plane + p] as f64 / 255.0))
                    .collect()
            }
            RgbLayout::Hwc => rec.iter().map(|&v| v as f64 / 255.0).collect(),
        };
        samples.push(preprocess_rgb32(&hwc)?);
    }
    if a.layout == RgbLayout::Hwc {
        labels = match &a.labels {
            Some(path) => read_maybe_gzip(path)?,
            None => vec![0; n],
        };
        if labels.len() != n {
            return Err(Failure::data(format!("{} images but {} labels", n, labels.len())));
        }
    } else if a.labels.is_some() {
        return Err(Failure::config("--labels applies to the hwc layout only"));
    }
    if let Some(bad) = labels.iter().find(|&&y| y as usize >= NUM_CLASSES) {
        return Err(Failure::data(format!("label {bad} is not a class index in 0..=9")));
    }
    let ds = ImageDataset::new(model_id(&a.input), samples, labels);
    for p in [&a.out_images, &a.out_labels] {
        drop(create(p)?);
    }
    save_idx(&ds, &a.out_images, &a.out_labels)?;
    write_sidecar(
        &a.out_images,
        "convert",
        a,
        &[&a.out_images, &a.out_labels],
        serde_json::json!({ "images": n }),
    )
}

/// Shifted copy of every input; input `i` draws noise from `(stream_seed, i)`.
fn shift_all(xs: &[Vec<f64>], mu: f64, stream_seed: u64) -> Vec<Vec<f64>> {
    let spec = ShiftSpec::new(mu, stream_seed);
    xs.iter()
        .enumerate()
        .map(|(i, x)| shift_apply(x, &spec, &mut substream(stream_seed, i as u64)))
        .collect()
}

fn ptu_cmd(a: &PtuArgs) -> CliResult {
    check_workers(&a.run)?;
    let post = load_model(&a.model)?;
    let mut xs = load_images(&a.data)?;
    if let Some(mu) = a.shift_mu {
        if !mu.is_finite() {
            return Err(Failure::config("--shift-mu must be finite"));
        }
        xs = shift_all(&xs, mu, child_seed(a.run.seed, 1));
    }
    let breakdowns = ptu_batch_breakdown(&xs, &post, a.m, a.run.seed, DrawSharing::Independent, a.run.workers)?;
    let values: Vec<f64> = breakdowns.iter().map(|b| b.ptu).collect();
    ensure_finite(&values, "pTU of input")?;
    let samples = PtuSampleSet::new(
        values,
        PtuMeta {
            model_id: model_id(&a.model),
            dataset_id: a.data.images.display().to_string(),
            m: a.m,
            seed: a.run.seed,
        },
    );
    samples.write_csv(create(&a.out)?)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(path) = &a.breakdown {
        write_breakdown_csv(create(path)?, &breakdowns)?;
        outputs.push(path);
    }
    if let Some(path) = &a.diagrams {
        // Input 0 under the first draw of its own stream, as used for its pTU.
        let w = sample_draws(&post, 1, &mut substream(a.run.seed, 0)).remove(0);
        let acts = forward_with_activations(&w, &xs[0])?;
        let diagrams = layer_diagrams(&w, &acts).map_err(Failure::data)?;
        write_diagrams_csv(create(path)?, &diagrams)?;
        outputs.push(path);
    }
    let tu = samples.values.iter().sum::<f64>() / samples.len() as f64;
    eprintln!("pTU of {} inputs, TU = {tu:.6e}", samples.len());
    write_sidecar(
        &a.out,
        "ptu",
        a,
        &outputs,
        serde_json::json!({ "meta": samples.meta, "inputs": samples.len(), "tu": tu }),
    )
}

fn perm_config(t: &TestArgs, seed: u64, workers: usize) -> PermutationConfig {
    PermutationConfig {
        order: t.order,
        permutations: t.permutations,
        alpha: t.alpha,
        seed,
        workers,
    }
}

#[derive(Serialize)]
struct OodReport {
    n: usize,
    tu_x: f64,
    tu_y: f64,
    #[serde(flatten)]
    test: PermutationTestResult,
}

fn read_ptu(path: &Path) -> CliResult<Vec<f64>> {
    let file = File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    PtuSampleSet::read_values(file).map_err(|e| Failure::from(e).context(path.display()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ood_test_cmd(a: &OodTestArgs) -> CliResult {
    check_workers(&a.run)?;
    let cfg = perm_config(&a.test, child_seed(a.run.seed, 2), a.run.workers);
    cfg.validate()?;
    let (x, y) = match (&a.x_ptu, &a.y_ptu, &a.model) {
        (Some(xp), Some(yp), None) => (read_ptu(xp)?, read_ptu(yp)?),
        (None, None, Some(model)) => {
            let (Some(xi), Some(yi)) = (&a.x_images, &a.y_images) else {
                return Err(Failure::config("--model needs --x-images and --y-images"));
            };
            if a.n == 0 {
                return Err(Failure::config("--n must be at least 1"));
            }
            let post = load_model(model)?;
            let xs = load_exact(xi, a.x_offset, a.n)?;
            let ys = load_exact(yi, a.y_offset, a.n)?;
            let x_seed = child_seed(a.run.seed, 0);
            let y_seed = if a.shared_ptu_seed { x_seed } else { child_seed(a.run.seed, 1) };
            let x = ptu_batch(&xs, &post, a.m, x_seed, a.run.workers)?.values;
            let y = ptu_batch(&ys, &post, a.m, y_seed, a.run.workers)?.values;
            (x, y)
        }
        _ => return Err(Failure::config("give either --x-ptu and --y-ptu, or --model with --x-images and --y-images")),
    };
    ensure_finite(&x, "pTU of x input")?;
    ensure_finite(&y, "pTU of y input")?;
    let mut test = permutation_test(&x, &y, &cfg)?;
    if !a.full {
        test.t_perm.clear();
    }
    let report = OodReport { n: x.len(), tu_x: mean(&x), tu_y: mean(&y), test };
    write_json(&a.out, &report)?;
    println!(
        "T = {:.6e}, p = {:.4}, {}",
        report.test.t_obs,
        report.test.p_value,
        if report.test.reject { "reject: covariate shift" } else { "no shift detected" }
    );
    write_sidecar(&a.out, "ood-test", a, &[&a.out], serde_json::json!({ "permutation_seed": cfg.seed }))
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Failure::config(format!("{flag}: cannot parse {t:?}"))))
        .collect()
}

fn power_curve_cmd(a: &PowerCurveArgs) -> CliResult {
    check_workers(&a.run)?;
    let mu_grid: Vec<f64> = parse_list(&a.mu_grid, "--mu-grid")?;
    let mut models = Vec::new();
    for entry in a.models.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (id, path) = match entry.split_once('=') {
            Some((id, path)) => (id.to_string(), PathBuf::from(path)),
            None => (model_id(Path::new(entry)), PathBuf::from(entry)),
        };
        models.push((id, load_model(&path)?));
    }
    if models.is_empty() {
        return Err(Failure::config("--models lists no model"));
    }
    let base = load_images(&a.data)?;
    let cfg = PowerConfig {
        mu_grid,
        reps: a.reps,
        n_per_side: a.n_per_side,
        m: a.m,
        test: perm_config(&a.test, 0, a.run.workers),
        seed: a.run.seed,
    };
    let curves = robustness_sweep(&models, &base, &cfg)?;
    write_curves_csv(create(&a.out)?, &curves)?;
    for (id, c) in &curves {
        let pts: Vec<String> = c.mu_grid.iter().zip(&c.power).map(|(m, p)| format!("{m}:{p:.2}")).collect();
        println!("{id}: {}", pts.join(" "));
    }
    write_sidecar(&a.out, "power-curve", a, &[&a.out], serde_json::Value::Null)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Serialize)]
struct LayerSpread {
    model: String,
    layer: usize,
    q1: f64,
    median: f64,
    q3: f64,
    iqr: f64,
    widest: bool,
}

fn layer_spreads(model: &str, breakdowns: &[PtuBreakdown]) -> Vec<LayerSpread> {
    let layers = breakdowns[0].layer_variances.len();
    let mut rows: Vec<LayerSpread> = (0..layers)
        .map(|l| {
            let mut v: Vec<f64> = breakdowns.iter().map(|b| b.layer_variances[l]).collect();
            v.sort_by(f64::total_cmp);
            let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
            LayerSpread { model: model.to_string(), layer: l + 1, q1, median, q3, iqr: q3 - q1, widest: false }
        })
        .collect();
    let widest = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.iqr.total_cmp(&b.1.iqr))
        .map(|(i, _)| i);
    if let Some(i) = widest {
        rows[i].widest = true;
    }
    rows
}

fn arch_sweep_cmd(a: &ArchSweepArgs) -> CliResult {
    check_workers(&a.run)?;
    let mut archs = Vec::new();
    for name in a.archs.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let arch = MlpArchitecture::from_name_or_spec(name)?;
        let label = DEPTH_GRID
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map_or_else(|| name.to_string(), |(n, _)| n.to_string());
        archs.push((label, arch));
    }
    if archs.is_empty() {
        return Err(Failure::config("--archs lists no architecture"));
    }
    if a.n_eval == 0 {
        return Err(Failure::config("--n-eval must be at least 1"));
    }
    prior(&a.training)?;
    let data = load_labelled(&a.data, &a.training.labels)?;
    let eval = load_exact(&a.eval_images, a.eval_offset, a.n_eval)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Failure::data(format!("{}: {e}", a.out_dir.display())))?;
    let summary_path = a.out_dir.join("summary.csv");
    let mut outputs = vec![summary_path.clone()];
    let mut spreads = Vec::new();
    let mut report = serde_json::Map::new();
    for (label, arch) in &archs {
        let (outcome, snapshot) = fit(arch, &a.training, &data, a.run.seed)?;
        let model_path = a.out_dir.join(format!("{label}.model.json"));
        let metrics_path = a.out_dir.join(format!("{label}.metrics.csv"));
        let breakdown_path = a.out_dir.join(format!("{label}.breakdown.csv"));
        save_snapshot(&model_path, &snapshot)?;
        write_metrics(&metrics_path, &outcome)?;
        let breakdowns = ptu_batch_breakdown(
            &eval,
            &outcome.posterior,
            a.m,
            child_seed(a.run.seed, 1),
            DrawSharing::Independent,
            a.run.workers,
        )?;
        ensure_finite(&breakdowns.iter().map(|b| b.ptu).collect::<Vec<_>>(), "pTU of input")?;
        write_breakdown_csv(create(&breakdown_path)?, &breakdowns)?;
        let rows = layer_spreads(label, &breakdowns);
        let last_widest = rows.last().is_some_and(|r| r.widest);
        eprintln!(
            "{label}: kept epoch {}, last layer {} the widest variance spread",
            outcome.best_epoch,
            if last_widest { "has" } else { "does not have" }
        );
        report.insert(label.clone(), serde_json::json!({ "last_layer_widest": last_widest }));
        spreads.extend(rows);
        outputs.extend([model_path, metrics_path, breakdown_path]);
    }
    let mut wtr = csv::Writer::from_writer(create(&summary_path)?);
    for row in &spreads {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_sidecar(&summary_path, "arch-sweep", a, &refs, serde_json::Value::Object(report))
}

/// `count` pairs of distinct positions in `0..n`.
fn random_pairs(n: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = substream(seed, 0);
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

#[derive(Serialize)]
struct ConstantsRow {
    draw: usize,
    layer: usize,
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "C")]
    c: f64,
    #[serde(rename = "cum_A")]
    cum_a: f64,
    #[serde(rename = "cum_B")]
    cum_b: f64,
}

fn stability_cmd(a: &StabilityArgs) -> CliResult {
    check_workers(&a.run)?;
    if a.pairs == 0 || a.m == 0 {
        return Err(Failure::config("--pairs and --m must be at least 1"));
    }
    if !(a.b0 > 0.0 && a.b0.is_finite()) {
        return Err(Failure::config("--b0 must be positive"));
    }
    let post = load_model(&a.model)?;
    let xs = load_images(&a.data)?;
    if xs.len() < 2 {
        return Err(Failure::data("at least two images are needed to form pairs"));
    }
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = random_pairs(xs.len(), a.pairs, child_seed(a.run.seed, 0))
        .into_iter()
        .map(|(i, j)| (xs[i].clone(), xs[j].clone()))
        .collect();
    let form = match a.form {
        BoundForm::Declared => LipschitzForm::Declared,
        BoundForm::WithPrefix => LipschitzForm::WithPrefix,
    };
    let check_seed = child_seed(a.run.seed, 1);
    let report = empirical_lipschitz_check(&post, &pairs, a.m, check_seed, a.b0, form, a.run.workers)
        .map_err(|e| match e {
            topood_core::ptu::PtuError::Config(msg) => Failure::data(msg),
            other => Failure::from(other),
        })?;
    ensure_finite(&[report.max_ratio, report.bound], "stability summary value")?;
    write_json(&a.out, &report)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(path) = &a.constants {
        // The same draws the check used.
        let draws = sample_draws(&post, a.m, &mut substream(check_seed, 0));
        let mut wtr = csv::Writer::from_writer(create(path)?);
        for (d, w) in draws.iter().enumerate() {
            let k = layer_constants(w, a.b0);
            for l in 0..k.a.len() {
                wtr.serialize(ConstantsRow {
                    draw: d,
                    layer: l + 1,
                    a: k.a[l],
                    b: k.b[l],
                    c: k.c[l],
                    cum_a: k.cum_a[l + 1],
                    cum_b: k.cum_b[l + 1],
                })?;
            }
        }
        wtr.flush()?;
        outputs.push(path);
    }
    println!(
        "{} pairs checked, max ratio {:.4e}, bound {:.4e}, {} violations",
        report.checked, report.max_ratio, report.bound, report.violations
    );
    write_sidecar(&a.out, "stability", a, &outputs, serde_json::Value::Null)
}
