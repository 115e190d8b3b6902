use std::path::{Path, PathBuf};

use delius::autoencoder::{build, pretrain, Autoencoder, AutoencoderSpec, PretrainReport};
use delius::baselines::{run_ae_kmeans_with, run_pca_kmeans_with};
use delius::checkpoint::Checkpoint;
use delius::dataio::{
    global_average_pool, read_assignments, read_feature_maps, read_features, read_label_manifest,
    stratified_sample, write_assignments, write_features, ClusterAssignments, Dtype, FeatureFormat,
    FeatureMatrix, LabelColumn, Labeling,
};
use delius::dec::{cluster_sizes, dec_fit, DecConfig, DecFit};
use delius::kmeans::KmeansConfig;
use delius::metrics::{evaluate, labeled_accuracy, EvalReport};
use delius::neural::{Activation, AdamConfig};
use delius::plot::{render_scatter, ScatterSpec};
use delius::projection::{pca_fit, tsne_embed, TsneConfig};
use delius::{Error, Rng};
use ndarray::Array2;

use crate::args::*;
use crate::manifest::{Ctx, Failure};

pub type CmdResult<T = ()> = Result<T, Failure>;

impl AdamOpts {
    fn config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

impl From<LabelColumnArg> for LabelColumn {
    fn from(c: LabelColumnArg) -> Self {
        match c {
            LabelColumnArg::Style => LabelColumn::Style,
            LabelColumnArg::Genre => LabelColumn::Genre,
        }
    }
}

fn format_for(ctx: &Ctx, path: &Path) -> FeatureFormat {
    match FeatureFormat::from_path(path) {
        FeatureFormat::Csv { .. } => FeatureFormat::Csv {
            header: ctx.csv_header,
        },
        other => other,
    }
}

fn load_features(ctx: &mut Ctx, path: &Path) -> CmdResult<FeatureMatrix> {
    ctx.input(path);
    read_features(path, format_for(ctx, path)).map_err(|e| ctx.fail(e))
}

fn save_points(ctx: &mut Ctx, ids: &[String], values: Array2<f64>, path: &Path) -> CmdResult {
    let m = FeatureMatrix::new(ids.to_vec(), values).map_err(|e| ctx.fail(e))?;
    ctx.output(path);
    write_features(&m, path, format_for(ctx, path)).map_err(|e| ctx.fail(e))
}

fn load_checkpoint(ctx: &mut Ctx, path: &Path) -> CmdResult<Checkpoint> {
    ctx.input(path);
    Checkpoint::read(path).map_err(|e| ctx.fail(e))
}

fn load_assignments(ctx: &mut Ctx, path: &Path) -> CmdResult<ClusterAssignments> {
    ctx.input(path);
    read_assignments(path).map_err(|e| ctx.fail(e))
}

fn check_fraction(fraction: f64) -> CmdResult {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "--fraction must be in (0, 1], got {fraction}"
        )))
    }
}

/// Fill accuracy fields from the label manifest, if one was given.
fn add_accuracy(
    ctx: &mut Ctx,
    labels: &LabelOpts,
    ids: &[String],
    clusters: &[usize],
    report: &mut EvalReport,
) -> CmdResult {
    let Some(path) = &labels.labels_manifest else {
        if labels.label_column.is_some() {
            return Err(Failure::Usage(
                "--label-column needs --labels-manifest".into(),
            ));
        }
        return Ok(());
    };
    ctx.input(path);
    let manifest = read_label_manifest(path).map_err(|e| ctx.fail(e))?;
    let known: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    if let Some(id) = manifest.ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(ctx.fail(Error::Data(format!(
            "manifest id {id:?} has no feature row"
        ))));
    }
    let columns = match labels.label_column {
        Some(c) => vec![c],
        None => vec![LabelColumnArg::Style, LabelColumnArg::Genre],
    };
    for column in columns {
        let acc = labeled_accuracy(ids, clusters, manifest.column(column.into()))
            .map_err(|e| ctx.fail(e))?;
        match column {
            LabelColumnArg::Style => report.acc_style = acc,
            LabelColumnArg::Genre => report.acc_genre = acc,
        }
    }
    Ok(())
}

fn write_json(ctx: &mut Ctx, value: &impl serde::Serialize, path: &Path) -> CmdResult {
    ctx.output(path);
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, json + "\n").map_err(|e| {
        ctx.fail(Error::Io {
            path: path.into(),
            source: e,
        })
    })
}

fn write_text(ctx: &mut Ctx, text: &str, path: &Path) -> CmdResult {
    ctx.output(path);
    std::fs::write(path, text).map_err(|e| {
        ctx.fail(Error::Io {
            path: path.into(),
            source: e,
        })
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn gap(ctx: &mut Ctx, args: &GapArgs) -> CmdResult {
    ctx.stage("pool");
    ctx.input(&args.maps);
    let block = read_feature_maps(&args.maps).map_err(|e| ctx.fail(e))?;
    let pooled = global_average_pool(&block).map_err(|e| ctx.fail(e))?;
    let format = match format_for(ctx, &args.out) {
        FeatureFormat::Binary(_) => FeatureFormat::Binary(match args.dtype {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }),
        csv => csv,
    };
    ctx.output(&args.out);
    write_features(&pooled, &args.out, format).map_err(|e| ctx.fail(e))
}

fn pretrain_stage(
    ctx: &mut Ctx,
    features: &FeatureMatrix,
    batch: usize,
    opts: &PretrainOpts,
    adam: &AdamOpts,
    out_checkpoint: &Path,
) -> CmdResult<(Autoencoder, PretrainReport)> {
    ctx.stage("pretrain");
    let spec = AutoencoderSpec {
        input_dim: features.d(),
        encoder_dims: opts.encoder_dims.clone(),
        batch_size: batch,
        epochs: opts.epochs,
        adam: adam.config(),
        hidden_activation: Activation::Relu,
    };
    spec.validate().map_err(|e| ctx.fail(e))?;
    ctx.record("pretrain", &spec);
    let mut rng = Rng::new(ctx.seed);
    let mut ae = build(&spec, &mut rng).map_err(|e| ctx.fail(e))?;
    match pretrain(&mut ae, features.values(), &spec, &mut rng) {
        Ok(report) => {
            ctx.output(out_checkpoint);
            Checkpoint::pretrained(&ae, ctx.seed, report.losses.len())
                .write(out_checkpoint)
                .map_err(|e| ctx.fail(e))?;
            Ok((ae, report))
        }
        Err(e) => {
            // keep the last good weights; they end up as a .partial file
            ctx.output(out_checkpoint);
            let _ = Checkpoint::pretrained(&ae, ctx.seed, 0).write(out_checkpoint);
            Err(ctx.fail(e))
        }
    }
}

pub fn pretrain_cmd(ctx: &mut Ctx, args: &PretrainArgs) -> CmdResult {
    ctx.stage("load");
    let features = load_features(ctx, &args.features)?;
    let (_, report) = pretrain_stage(
        ctx,
        &features,
        args.batch,
        &args.pretrain,
        &args.adam,
        &args.out_checkpoint,
    )?;
    let curve = args
        .out_curve
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out_checkpoint, ".loss.csv"));
    ctx.output(&curve);
    report.write_curve(&curve).map_err(|e| ctx.fail(e))?;
    eprintln!(
        "pretrained {} epochs, final loss {:.6}",
        report.losses.len(),
        report.final_loss
    );
    Ok(())
}

fn dec_config(k: usize, batch: usize, opts: &ClusterOpts, adam: &AdamOpts) -> DecConfig {
    DecConfig {
        update_interval: opts.update_interval,
        delta: opts.delta,
        batch_size: batch,
        adam: adam.config(),
        max_iterations: opts.max_iterations,
        kmeans_restarts: opts.restarts,
        ..DecConfig::new(k)
    }
}

struct ClusterOutputs<'a> {
    assignments: &'a Path,
    checkpoint: &'a Path,
    history: &'a Path,
    embedded: Option<&'a Path>,
}

fn cluster_stage(
    ctx: &mut Ctx,
    features: &FeatureMatrix,
    encoder: &delius::neural::Mlp,
    cfg: &DecConfig,
    out: &ClusterOutputs<'_>,
) -> CmdResult<DecFit> {
    ctx.stage("cluster");
    ctx.record("cluster", cfg);
    let fit = dec_fit(features.values(), encoder, cfg, &mut Rng::new(ctx.seed))
        .map_err(|e| ctx.fail(e))?;
    let assignments = ClusterAssignments::new(
        features.ids().to_vec(),
        fit.state.hard.clone(),
        Some(fit.state.q.clone()),
        cfg.k,
    )
    .map_err(|e| ctx.fail(e))?;
    ctx.output(out.assignments);
    write_assignments(&assignments, out.assignments).map_err(|e| ctx.fail(e))?;
    ctx.output(out.checkpoint);
    Checkpoint::clustered(
        &fit.encoder,
        &fit.centroids,
        ctx.seed,
        fit.history.iterations,
    )
    .write(out.checkpoint)
    .map_err(|e| ctx.fail(e))?;
    ctx.output(out.history);
    fit.history
        .write_csv(out.history)
        .map_err(|e| ctx.fail(e))?;
    if let Some(path) = out.embedded {
        save_points(ctx, features.ids(), fit.embedded.clone(), path)?;
    }
    let sizes = cluster_sizes(&fit.state.hard, cfg.k);
    eprintln!(
        "{} after {} iterations; cluster sizes {:?}",
        if fit.converged() {
            "converged"
        } else {
            "stopped at the iteration cap"
        },
        fit.history.iterations,
        sizes.to_vec()
    );
    Ok(fit)
}

pub fn cluster_cmd(ctx: &mut Ctx, args: &ClusterArgs) -> CmdResult {
    ctx.stage("config");
    let cfg = dec_config(args.k, args.batch, &args.cluster, &args.adam);
    cfg.validate().map_err(|e| ctx.fail(e))?;
    ctx.stage("load");
    let features = load_features(ctx, &args.features)?;
    let ck = load_checkpoint(ctx, &args.ae_checkpoint)?;
    let history = args
        .out_history
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out_assignments, ".history.csv"));
    let out = ClusterOutputs {
        assignments: &args.out_assignments,
        checkpoint: &args.out_checkpoint,
        history: &history,
        embedded: args.out_embedded.as_deref(),
    };
    cluster_stage(ctx, &features, &ck.encoder, &cfg, &out)?;
    Ok(())
}

pub fn eval_cmd(ctx: &mut Ctx, args: &EvalArgs) -> CmdResult {
    ctx.stage("load");
    let points = load_features(ctx, &args.points)?;
    let assignments = load_assignments(ctx, &args.assignments)?;
    ctx.stage("eval");
    let clusters = assignments
        .aligned_to(points.ids())
        .map_err(|e| ctx.fail(e))?;
    let mut report =
        evaluate(points.values(), &clusters, &args.space_tag).map_err(|e| ctx.fail(e))?;
    add_accuracy(ctx, &args.labels, points.ids(), &clusters, &mut report)?;
    write_json(ctx, &report, &args.out)
}

pub fn baseline_cmd(ctx: &mut Ctx, args: &BaselineArgs) -> CmdResult {
    ctx.stage("load");
    let features = load_features(ctx, &args.features)?;
    let cfg = KmeansConfig {
        restarts: args.restarts,
        ..KmeansConfig::new(args.k)
    };
    ctx.record("kmeans", &cfg);
    let mut run = match args.strategy {
        StrategyArg::PcaKmeans => {
            ctx.stage("baseline");
            run_pca_kmeans_with(features.values(), &cfg, args.r, ctx.seed)
                .map_err(|e| ctx.fail(e))?
        }
        StrategyArg::AeKmeans => {
            let path = args
                .ae_checkpoint
                .as_ref()
                .ok_or_else(|| Failure::Usage("ae-kmeans needs --ae-checkpoint".into()))?;
            let ck = load_checkpoint(ctx, path)?;
            ctx.stage("baseline");
            run_ae_kmeans_with(features.values(), &ck.encoder, &cfg, ctx.seed)
                .map_err(|e| ctx.fail(e))?
        }
    };
    add_accuracy(
        ctx,
        &args.labels,
        features.ids(),
        &run.labels,
        &mut run.report,
    )?;
    if let Some(path) = &args.out_assignments {
        let a = ClusterAssignments::new(features.ids().to_vec(), run.labels.clone(), None, args.k)
            .map_err(|e| ctx.fail(e))?;
        ctx.output(path);
        write_assignments(&a, path).map_err(|e| ctx.fail(e))?;
    }
    write_json(ctx, &run, &args.out)
}

/// Strata for the stratified sample: a manifest label column if given,
/// otherwise cluster assignments.
fn strata(
    ctx: &mut Ctx,
    labels: &LabelOpts,
    assignments: Option<&ClusterAssignments>,
) -> CmdResult<Option<Labeling>> {
    match (&labels.labels_manifest, labels.label_column) {
        (Some(path), Some(column)) => {
            ctx.input(path);
            let manifest = read_label_manifest(path).map_err(|e| ctx.fail(e))?;
            Ok(Some(manifest.column(column.into()).clone()))
        }
        _ => Ok(assignments.map(|a| Labeling::from_indices(&a.ids, &a.hard))),
    }
}

fn project_stage(
    ctx: &mut Ctx,
    points: &FeatureMatrix,
    opts: &ProjectOpts,
    fraction: f64,
    strata: Option<&Labeling>,
    out: &Path,
) -> CmdResult<(Vec<String>, Array2<f64>)> {
    ctx.stage("project");
    check_fraction(fraction)?;
    let sample = match strata {
        Some(strata) => stratified_sample(points, strata, fraction, &mut Rng::new(ctx.seed)).map_err(|e| ctx.fail(e))?,
        None if fraction == 1.0 => points.clone(),
        None => {
            return Err(Failure::Usage(
                "sampling with --fraction < 1 needs --assignments or --labels-manifest with --label-column".into(),
            ))
        }
    };
    let (coords, header) = match opts.method {
        MethodArg::Pca => {
            let model = pca_fit(sample.values(), opts.r).map_err(|e| ctx.fail(e))?;
            let c = model.transform(sample.values()).map_err(|e| ctx.fail(e))?;
            let header = (1..=opts.r).map(|j| format!("c_{j}")).collect::<Vec<_>>();
            (c, header)
        }
        MethodArg::Tsne => {
            let cfg = TsneConfig {
                perplexity: opts.perplexity,
                iterations: opts.tsne_iterations,
                seed: ctx.seed,
                ..TsneConfig::default()
            };
            ctx.record("tsne", &cfg);
            let c = tsne_embed(sample.values(), &cfg).map_err(|e| ctx.fail(e))?;
            (c, vec!["x".to_string(), "y".to_string()])
        }
    };
    ctx.output(out);
    write_xy(out, sample.ids(), &coords, &header).map_err(|e| ctx.fail(e))?;
    Ok((sample.ids().to_vec(), coords))
}

pub fn project_cmd(ctx: &mut Ctx, args: &ProjectArgs) -> CmdResult {
    ctx.stage("load");
    let points = load_features(ctx, &args.points)?;
    let assignments = match &args.assignments {
        Some(path) => Some(load_assignments(ctx, path)?),
        None => None,
    };
    let strata = strata(ctx, &args.labels, assignments.as_ref())?;
    project_stage(
        ctx,
        &points,
        &args.projection,
        args.fraction,
        strata.as_ref(),
        &args.out,
    )?;
    Ok(())
}

fn write_xy(
    path: &Path,
    ids: &[String],
    coords: &Array2<f64>,
    header: &[String],
) -> delius::Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.into(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    let mut row = vec!["id".to_string()];
    row.extend(header.iter().cloned());
    w.write_record(&row).map_err(|e| io(e.into()))?;
    for (id, c) in ids.iter().zip(coords.rows()) {
        let mut row = vec![id.clone()];
        row.extend(c.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

/// Ids and the first two coordinate columns of a projection CSV.
fn read_xy(path: &Path) -> delius::Result<(Vec<String>, Array2<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.into(),
            source,
        },
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    let bad = |line: u64, message: String| Error::Format {
        location: format!("{}:{line}", path.display()),
        message,
    };
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| bad(0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 3 {
            return Err(bad(line, "need an id and two coordinates".into()));
        }
        ids.push(record[0].to_string());
        for field in &record.iter().collect::<Vec<_>>()[1..3] {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(line, format!("bad coordinate {field:?}")))?,
            );
        }
    }
    let n = ids.len();
    Ok((
        ids,
        Array2::from_shape_vec((n, 2), values).expect("two values per row"),
    ))
}

fn plot_stage(
    ctx: &mut Ctx,
    ids: &[String],
    coords: Array2<f64>,
    assignments: &ClusterAssignments,
    args: &PlotArgs,
) -> CmdResult {
    ctx.stage("plot");
    let labels = assignments.aligned_to(ids).map_err(|e| ctx.fail(e))?;
    let spec = ScatterSpec {
        points: coords,
        labels,
        width: args.width,
        height: args.height,
        radius: args.radius,
        title: args.title.clone(),
    };
    let svg = render_scatter(&spec).map_err(|e| ctx.fail(e))?;
    write_text(ctx, &svg, &args.out)
}

pub fn plot_cmd(ctx: &mut Ctx, args: &PlotArgs) -> CmdResult {
    ctx.stage("load");
    ctx.input(&args.xy);
    let (ids, coords) = read_xy(&args.xy).map_err(|e| ctx.fail(e))?;
    let assignments = load_assignments(ctx, &args.assignments)?;
    plot_stage(ctx, &ids, coords, &assignments, args)
}

pub fn run_cmd(ctx: &mut Ctx, args: &RunArgs) -> CmdResult {
    ctx.stage("config");
    std::fs::create_dir_all(&args.out_dir).map_err(|e| {
        ctx.fail(Error::Io {
            path: args.out_dir.clone(),
            source: e,
        })
    })?;
    let cfg = dec_config(args.k, args.batch, &args.cluster, &args.adam);
    cfg.validate().map_err(|e| ctx.fail(e))?;
    check_fraction(args.fraction)?;
    if matches!(args.projection.method, MethodArg::Pca) && args.projection.r < 2 {
        return Err(Failure::Usage(
            "plotting a PCA projection needs --r of at least 2".into(),
        ));
    }
    if args.labels.label_column.is_some() && args.labels.labels_manifest.is_none() {
        return Err(Failure::Usage(
            "--label-column needs --labels-manifest".into(),
        ));
    }
    ctx.stage("load");
    let features = load_features(ctx, &args.features)?;
    let dir = |name: &str| args.out_dir.join(name);

    let ae_path = dir("autoencoder.delc");
    let (ae, report) = pretrain_stage(
        ctx,
        &features,
        args.batch,
        &args.pretrain,
        &args.adam,
        &ae_path,
    )?;
    let curve = dir("pretrain_loss.csv");
    ctx.output(&curve);
    report.write_curve(&curve).map_err(|e| ctx.fail(e))?;

    let (assignments_path, history_path, embedded_path) = (
        dir("assignments.csv"),
        dir("history.csv"),
        dir("embedded.delf"),
    );
    let out = ClusterOutputs {
        assignments: &assignments_path,
        checkpoint: &dir("clustering.delc"),
        history: &history_path,
        embedded: Some(&embedded_path),
    };
    let fit = cluster_stage(ctx, &features, &ae.encoder, &cfg, &out)?;

    ctx.stage("eval");
    let mut eval =
        evaluate(fit.embedded.view(), &fit.state.hard, "embedded").map_err(|e| ctx.fail(e))?;
    add_accuracy(
        ctx,
        &args.labels,
        features.ids(),
        &fit.state.hard,
        &mut eval,
    )?;
    write_json(ctx, &eval, &dir("report.json"))?;

    let embedded = FeatureMatrix::new(features.ids().to_vec(), fit.embedded.clone())
        .map_err(|e| ctx.fail(e))?;
    let assignments = ClusterAssignments::new(
        features.ids().to_vec(),
        fit.state.hard.clone(),
        None,
        args.k,
    )
    .map_err(|e| ctx.fail(e))?;
    let strata = strata(ctx, &args.labels, Some(&assignments))?;
    let (ids, coords) = project_stage(
        ctx,
        &embedded,
        &args.projection,
        args.fraction,
        strata.as_ref(),
        &dir("projection.csv"),
    )?;
    let plot = PlotArgs {
        xy: dir("projection.csv"),
        assignments: assignments_path.clone(),
        out: dir("plot.svg"),
        title: Some(format!("k = {}", args.k)),
        width: 800,
        height: 800,
        radius: 3.0,
    };
    let coords = coords.slice(ndarray::s![.., ..2]).to_owned();
    plot_stage(ctx, &ids, coords, &assignments, &plot)
}
