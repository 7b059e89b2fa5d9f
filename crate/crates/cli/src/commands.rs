use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;
use ssm_core::bench::{
    format_latency, format_scaling, format_speed, offline_scaling, query_latency_by_iterations,
    query_vs_reiteration, random_workload,
};
use ssm_core::eval::{evaluate, format_table, mean_report, report_csv, EvalReport, REPORT_RANKS};
use ssm_core::io::{
    matrix_rows, read_labels_csv, read_matrix_file, read_rankings_csv, read_truth_csv,
    write_labels_csv, write_matrix_file, write_ranking, write_truth_csv, BlockKind, LabelRecord,
    TruthTable, RANKINGS_HEADER,
};
use ssm_core::pipeline::{learn_model, rank_probe};
use ssm_core::synthetic::{generate_synthetic, SyntheticSpec};
use ssm_core::{DistanceMatrix, Execution, ModelFile};

use crate::config::ParamFlags;

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Square distance matrix (.ssm binary, or .csv)
    #[arg(long)]
    pub distances: PathBuf,
    /// Labels CSV with header index,block,identity
    #[arg(long)]
    pub labels: PathBuf,
    /// Model file to write
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamFlags,
}

pub fn learn(args: &LearnArgs, exec: Execution) -> Result<()> {
    let cfg = args.params.resolve()?;
    cfg.propagation.validate()?;
    let started = Instant::now();
    let d = read_matrix_file(&args.distances)
        .with_context(|| format!("reading distances {}", args.distances.display()))?;
    let dist = DistanceMatrix::new(d).context("validating distances")?;
    let records = read_labels_csv(BufReader::new(
        File::open(&args.labels).with_context(|| format!("opening {}", args.labels.display()))?,
    ))
    .with_context(|| format!("reading labels {}", args.labels.display()))?;
    let model = learn_model(&dist, &records, &cfg, exec).context("learning")?;
    model
        .save(&args.out)
        .with_context(|| format!("writing model {}", args.out.display()))?;
    eprintln!(
        "learned {} gallery + {} labeled vertices, {} iterations, {:.2?}",
        model.layout.n_gallery,
        model.layout.n_labeled,
        model.iterations_run,
        started.elapsed()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One probe per row, distances to every database instance in the
    /// original distance-file order (.ssm or .csv)
    #[arg(long)]
    pub probes: PathBuf,
    /// Rankings CSV; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Probes ranked concurrently per batch; bounds memory use
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
}

pub fn query(args: &QueryArgs, exec: Execution) -> Result<()> {
    let model = ModelFile::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let matcher = model.matcher();
    let rows = matrix_rows(&args.probes)
        .with_context(|| format!("reading probes {}", args.probes.display()))?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "{RANKINGS_HEADER}")?;

    let batch_len = args.batch.max(1);
    let mut batch: Vec<Vec<f64>> = Vec::with_capacity(batch_len);
    let mut next_probe = 0usize;
    let mut rows = rows.peekable();
    while rows.peek().is_some() {
        batch.clear();
        for row in rows.by_ref().take(batch_len) {
            let p = next_probe + batch.len();
            batch.push(row.with_context(|| format!("probe row {p}"))?);
        }
        let ranked =
            ssm_core::exec::map_slice(exec, &batch, |raw| rank_probe(&model, &matcher, raw));
        for (k, r) in ranked.into_iter().enumerate() {
            let p = next_probe + k;
            let r = r.with_context(|| format!("probe row {p}"))?;
            write_ranking(&mut out, p, &r, |g| model.gallery_original_index(g))?;
        }
        next_probe += batch.len();
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Rankings CSV, one per trial; pair each with a --truth
    #[arg(long, required = true)]
    pub rankings: Vec<PathBuf>,
    /// Truth CSV with header role,index,identity
    #[arg(long, required = true)]
    pub truth: Vec<PathBuf>,
    /// Aligned text table; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the long-format CSV report here
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Skip probes that have no match in the gallery
    #[arg(long)]
    pub allow_unmatched: bool,
}

fn eval_trial(rankings: &Path, truth: &Path, allow_unmatched: bool) -> Result<EvalReport> {
    let open = |p: &Path| -> Result<BufReader<File>> {
        Ok(BufReader::new(
            File::open(p).with_context(|| format!("opening {}", p.display()))?,
        ))
    };
    let lists = read_rankings_csv(open(rankings)?)
        .with_context(|| format!("reading rankings {}", rankings.display()))?;
    let table = read_truth_csv(open(truth)?)
        .with_context(|| format!("reading truth {}", truth.display()))?;
    let (ranked, mut gt) = table.align(&lists)?;
    gt.allow_unmatched = allow_unmatched;
    Ok(evaluate(&ranked, &gt)?)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    if args.rankings.len() != args.truth.len() {
        return Err(ssm_core::Error::Config(format!(
            "{} --rankings files but {} --truth files",
            args.rankings.len(),
            args.truth.len()
        ))
        .into());
    }
    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    for (i, (r, t)) in args.rankings.iter().zip(&args.truth).enumerate() {
        let rep =
            eval_trial(r, t, args.allow_unmatched).with_context(|| format!("trial {}", i + 1))?;
        rows.push((format!("trial{}", i + 1), rep));
    }
    if rows.len() > 1 {
        let reports: Vec<EvalReport> = rows.iter().map(|(_, r)| r.clone()).collect();
        rows.push(("mean".into(), mean_report(&reports).expect("non-empty")));
    }
    let mut out = output(args.out.as_deref())?;
    write!(out, "{}", format_table(&rows, &REPORT_RANKS))?;
    out.flush()?;
    if let Some(p) = &args.csv {
        fs::write(p, report_csv(&rows)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for database.ssm, labels.csv, probes.ssm and truth.csv
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub identities: usize,
    #[arg(long, default_value_t = 2)]
    pub views: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 2.0)]
    pub offset: f64,
    #[arg(long, default_value_t = 0.6)]
    pub noise: f64,
    #[arg(long, default_value_t = 50)]
    pub distractors: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_identities: args.identities,
        images_per_identity: args.views,
        feature_dim: args.dim,
        camera_offset_scale: args.offset,
        noise_scale: args.noise,
        n_distractors: args.distractors,
        seed: args.seed,
    };
    let data = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = |name: &str| args.out.join(name);

    write_matrix_file(&path("database.ssm"), data.database.matrix())?;
    write_matrix_file(&path("probes.ssm"), &data.probe_distances)?;

    let layout = data.layout;
    let records: Vec<LabelRecord> = layout
        .gallery()
        .map(|index| LabelRecord {
            index,
            block: BlockKind::Gallery,
            identity: None,
        })
        .chain(
            layout
                .labeled()
                .zip(&data.labeled_identities)
                .map(|(index, &id)| LabelRecord {
                    index,
                    block: BlockKind::Labeled,
                    identity: Some(id),
                }),
        )
        .collect();
    let mut w = BufWriter::new(File::create(path("labels.csv"))?);
    write_labels_csv(&mut w, &records)?;
    w.flush()?;

    let truth = TruthTable {
        probes: data
            .truth
            .probe_identities
            .iter()
            .copied()
            .enumerate()
            .collect(),
        gallery: data
            .truth
            .gallery_identities
            .iter()
            .copied()
            .enumerate()
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path("truth.csv"))?);
    write_truth_csv(&mut w, &truth)?;
    w.flush()?;
    eprintln!(
        "wrote {} database instances ({} gallery, {} labeled) and {} probes to {}",
        layout.total(),
        layout.n_gallery,
        layout.n_labeled,
        data.probe_distances.rows(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Database sizes for the offline scaling fit
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000")]
    pub sizes: Vec<usize>,
    /// Repetitions per size (best time kept)
    #[arg(long, default_value_t = 2)]
    pub reps: usize,
    /// Database size for the online comparisons
    #[arg(long, default_value_t = 1000)]
    pub query_n: usize,
    /// Probes timed through the online path
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
    /// Probes timed through full re-iteration
    #[arg(long, default_value_t = 1)]
    pub slow_probes: usize,
    /// Iteration budgets for the latency table
    #[arg(long, value_delimiter = ',', default_value = "10,30,100")]
    pub budgets: Vec<usize>,
    /// Report file; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamFlags,
}

pub fn bench(args: &BenchArgs, exec: Execution) -> Result<()> {
    let cfg = args.params.resolve()?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "execution: {exec:?}")?;

    let scaling = offline_scaling(&args.sizes, args.reps, &cfg.propagation, &cfg.graph, exec)?;
    writeln!(out, "{}", format_scaling(&scaling))?;
    out.flush()?;

    let w = random_workload(args.query_n, args.probes, 7)?;
    let speed = query_vs_reiteration(&w, &cfg.graph, &cfg.propagation, args.slow_probes, 3, exec)?;
    writeln!(out, "{}", format_speed(&[speed]))?;
    out.flush()?;

    let lat = query_latency_by_iterations(
        &w,
        &cfg.graph,
        cfg.propagation.alpha,
        &args.budgets,
        3,
        exec,
    )?;
    write!(out, "{}", format_latency(args.query_n, &lat))?;
    out.flush()?;
    Ok(())
}
