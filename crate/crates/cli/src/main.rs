//! `thermhand` command-line tool.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use thermhand::bdm::{identify, train_bdm_with, BdmConfig, BdmModel, Gallery};
use thermhand::features::FeatureVector;
use thermhand::fusion::{alpha_grid, fuse_systems, Fused, FusionRule, Normalization, Polarity};
use thermhand::harness::{
    extract_sample_features, generate_dataset, load_dataset, read_feature_csv, read_score_csv,
    read_truth_csv, run_evaluation, save_dataset, sweep_table, write_feature_csv, write_report_csv,
    write_score_csv, write_sweep_csv, write_truth_csv, EvaluationConfig, FeatureRow, Spectrum,
    SyntheticConfig,
};
use thermhand::image::{load_image, save_image, save_mask};
use thermhand::regions::RegionKind;
use thermhand::segmentation::{
    register_masks, segment_thermal_with, SegmentConfig, SimilarityTransform,
};
use thermhand::{par, BitDepth};

#[derive(Parser)]
#[command(
    name = "thermhand",
    version,
    about = "Visible + thermal hand identification pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset (PGM pairs, ground truth and manifest.csv)
    Generate(GenerateArgs),
    /// VIS-guided segmentation of one thermal frame
    Segment(SegmentArgs),
    /// DCT features of every sample in a dataset
    Extract(ExtractArgs),
    /// Train a dispersion matcher on the first samples of each user
    Train(TrainArgs),
    /// Rank enrolled users for one probe row
    Identify(IdentifyArgs),
    /// Run the train/test protocol and write the rate table
    Evaluate(EvaluateArgs),
    /// Combine VIS and TH score files
    Fuse(FuseArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator settings (TOML); defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("mapping").required(true).args(["calib", "register"])))]
struct SegmentArgs {
    #[arg(long)]
    vis: PathBuf,
    #[arg(long)]
    th: PathBuf,
    /// VIS to TH transform record ("rotation dx dy scale")
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Estimate the transform by simplex registration
    #[arg(long)]
    register: bool,
    #[arg(long, default_value_t = 8)]
    vis_depth: u8,
    #[arg(long, default_value_t = 16)]
    th_depth: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["input", "manifest"])))]
struct ExtractArgs {
    /// Dataset directory containing manifest.csv
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// finger, central or hand
    #[arg(long, value_parser = parse_region)]
    region: RegionKind,
    #[arg(long)]
    length: usize,
    /// Spectra to extract; both when omitted
    #[arg(long, value_parser = parse_spectrum)]
    spectrum: Vec<Spectrum>,
    /// Evaluation config supplying segmentation and region settings
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Selection {
    #[arg(long, value_parser = parse_region)]
    region: Option<RegionKind>,
    #[arg(long, value_parser = parse_spectrum)]
    spectrum: Option<Spectrum>,
    /// Training samples per user, taken in (session, sample) order
    #[arg(long, default_value_t = 5)]
    train_samples: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    sigma_threshold: f64,
    #[command(flatten)]
    select: Selection,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Probe row as user:session:sample
    #[arg(long)]
    probe: String,
    /// Feature file holding the probe and the enrolled samples
    #[arg(long)]
    gallery: PathBuf,
    #[command(flatten)]
    select: Selection,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Evaluation settings (TOML); defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-system score files and truth.csv here
    #[arg(long)]
    scores_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Product,
    Mean,
    Median,
    Max,
    Min,
    Vote,
    Weighted,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    None,
    Zscore,
    Minmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarityArg {
    Lower,
    Higher,
}

#[derive(Args)]
#[command(group(ArgGroup::new("weight").args(["alpha", "sweep"])))]
struct FuseArgs {
    #[arg(long)]
    vis_scores: PathBuf,
    #[arg(long)]
    th_scores: PathBuf,
    #[arg(long, value_enum)]
    rule: RuleArg,
    /// Weight of the VIS scores for the weighted rule
    #[arg(long)]
    alpha: Option<f64>,
    /// Alpha grid start:step:end; writes identification rates per alpha
    #[arg(long)]
    sweep: Option<String>,
    /// Probe truth (needed with --sweep)
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = NormArg::None)]
    normalization: NormArg,
    /// Which way the input scores point
    #[arg(long, value_enum, default_value_t = PolarityArg::Lower)]
    polarity: PolarityArg,
    #[arg(long)]
    out: PathBuf,
}

fn parse_region(s: &str) -> Result<RegionKind, String> {
    s.parse()
        .map_err(|e: thermhand::regions::RegionError| e.to_string())
}

fn parse_spectrum(s: &str) -> Result<Spectrum, String> {
    s.parse()
        .map_err(|e: thermhand::harness::HarnessError| e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => SyntheticConfig::from_toml(&read_text(p)?)?,
        None => SyntheticConfig::default(),
    };
    let ds = generate_dataset(&cfg)?;
    let manifest = save_dataset(&ds, &args.out)?;
    println!(
        "{} samples from {} users -> {}",
        ds.len(),
        ds.user_ids().len(),
        manifest.display()
    );
    Ok(())
}

fn segment(args: SegmentArgs) -> Result<()> {
    let vis = load_image(&args.vis, BitDepth::from_bits(args.vis_depth)?)
        .with_context(|| format!("loading {}", args.vis.display()))?;
    let th = load_image(&args.th, BitDepth::from_bits(args.th_depth)?)
        .with_context(|| format!("loading {}", args.th.display()))?;
    let cfg = SegmentConfig::default();
    let transform = match &args.calib {
        Some(p) => read_text(p)?
            .parse::<SimilarityTransform>()
            .map_err(|e| anyhow!("{}: {e}", p.display()))?,
        None => {
            let vis_mask = thermhand::segmentation::segment_visible(&vis, &cfg)?;
            let r = register_masks(
                &vis_mask,
                &th,
                &SimilarityTransform::identity(),
                &Default::default(),
            )?;
            println!(
                "registered: {} (1 - Dice {:.4}, {} iterations{})",
                r.transform.to_string().lines().last().unwrap_or_default(),
                r.objective_value,
                r.iterations,
                if r.converged { "" } else { ", not converged" }
            );
            r.transform
        }
    };
    let seg = segment_thermal_with(&vis, &th, &transform, &cfg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_mask(&seg.vis_mask, args.out.join("vis_mask.pgm"))?;
    save_mask(&seg.th_mask, args.out.join("th_mask.pgm"))?;
    save_image(
        &seg.masked_th,
        args.out.join("masked_th.pgm"),
        BitDepth::Sixteen,
    )?;
    fs::write(args.out.join("transform.txt"), transform.to_string())?;
    println!(
        "{} hand pixels in the TH frame -> {}",
        seg.th_mask.count(),
        args.out.display()
    );
    Ok(())
}

fn extract(args: ExtractArgs) -> Result<()> {
    let manifest = match (&args.manifest, &args.input) {
        (Some(m), _) => m.clone(),
        (None, Some(dir)) => dir.join("manifest.csv"),
        (None, None) => unreachable!("clap requires one source"),
    };
    let cfg = match &args.config {
        Some(p) => EvaluationConfig::from_toml(&read_text(p)?)?,
        None => EvaluationConfig::default(),
    };
    let spectra = if args.spectrum.is_empty() {
        vec![Spectrum::Vis, Spectrum::Th]
    } else {
        args.spectrum.clone()
    };
    let ds = load_dataset(&manifest)?;
    let jobs: Vec<_> = ds
        .samples()
        .iter()
        .flat_map(|s| spectra.iter().map(move |&k| (s, k)))
        .collect();
    let rows = par::try_map(cfg.execution, &jobs, |&(s, spectrum)| {
        let mut v = extract_sample_features(s, spectrum, &[args.region], args.length, &cfg)
            .map_err(|e| {
                anyhow!(
                    "user {} session {} sample {} ({spectrum}): {e}",
                    s.user_id,
                    s.session,
                    s.sample
                )
            })?;
        Ok::<_, anyhow::Error>(FeatureRow {
            user_id: s.user_id,
            session: s.session,
            sample: s.sample,
            region: args.region,
            spectrum,
            features: v.remove(0),
        })
    })?;
    let mut out = create(&args.out)?;
    write_feature_csv(&mut out, &rows)?;
    out.flush()?;
    println!(
        "{} feature rows of length {} -> {}",
        rows.len(),
        args.length,
        args.out.display()
    );
    Ok(())
}

/// Rows of the single (region, spectrum) pair left after filtering.
fn select_rows(rows: Vec<FeatureRow>, sel: &Selection) -> Result<Vec<FeatureRow>> {
    let rows: Vec<FeatureRow> = rows
        .into_iter()
        .filter(|r| {
            sel.region.is_none_or(|k| r.region == k) && sel.spectrum.is_none_or(|s| r.spectrum == s)
        })
        .collect();
    let mut kinds: Vec<(RegionKind, Spectrum)> =
        rows.iter().map(|r| (r.region, r.spectrum)).collect();
    kinds.sort_by_key(|k| (k.0.as_str(), k.1));
    kinds.dedup();
    match kinds.len() {
        0 => bail!("no feature rows match the requested region/spectrum"),
        1 => Ok(rows),
        _ => bail!(
            "feature file mixes {} region/spectrum pairs; pick one with --region and --spectrum",
            kinds.len()
        ),
    }
}

/// First `n` rows per user in (session, sample) order.
fn training_rows(rows: &[FeatureRow], n: usize) -> Result<Vec<&FeatureRow>> {
    let mut by_user: BTreeMap<u32, Vec<&FeatureRow>> = BTreeMap::new();
    for r in rows {
        by_user.entry(r.user_id).or_default().push(r);
    }
    let mut out = Vec::new();
    for (user, mut list) in by_user {
        list.sort_by_key(|r| (r.session, r.sample));
        if list.len() < n {
            bail!(
                "user {user} has {} feature rows, {n} needed for training",
                list.len()
            );
        }
        out.extend(list.into_iter().take(n));
    }
    Ok(out)
}

fn truncated(v: &FeatureVector, len: usize) -> Result<FeatureVector> {
    if v.len() < len {
        bail!(
            "feature vectors have {} values, model expects {len}",
            v.len()
        );
    }
    Ok(FeatureVector::new(v.values()[..len].to_vec(), v.order()))
}

fn gallery_of(rows: &[&FeatureRow], len: Option<usize>) -> Result<Gallery> {
    let samples = rows
        .iter()
        .map(|r| {
            Ok((
                r.user_id,
                truncated(&r.features, len.unwrap_or(r.features.len()))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Gallery::from_samples(samples)?)
}

fn train(args: TrainArgs) -> Result<()> {
    let rows = select_rows(read_feature_csv(open(&args.features)?)?, &args.select)?;
    let gallery = gallery_of(&training_rows(&rows, args.select.train_samples)?, None)?;
    let cfg = BdmConfig {
        sigma_threshold: args.sigma_threshold,
        ..BdmConfig::default()
    };
    let model = train_bdm_with(&gallery, &cfg)?;
    let mut out = create(&args.out)?;
    out.write_all(model.to_json().as_bytes())?;
    out.flush()?;
    println!(
        "{} of {} components selected at sigma-threshold {} -> {}",
        model.selected().len(),
        model.feature_length(),
        args.sigma_threshold,
        args.out.display()
    );
    Ok(())
}

fn identify_cmd(args: IdentifyArgs) -> Result<()> {
    let model = BdmModel::from_json(&read_text(&args.model)?)?;
    let parts: Vec<u32> = args
        .probe
        .split(':')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow!("probe must be user:session:sample, got {:?}", args.probe))?;
    let [user, session, sample] = parts[..] else {
        bail!("probe must be user:session:sample, got {:?}", args.probe);
    };
    let rows = select_rows(read_feature_csv(open(&args.gallery)?)?, &args.select)?;
    let probe = rows
        .iter()
        .find(|r| (r.user_id, r.session, r.sample) == (user, session, sample))
        .ok_or_else(|| {
            anyhow!(
                "probe {} not found in {}",
                args.probe,
                args.gallery.display()
            )
        })?;
    let len = model.feature_length();
    let gallery = gallery_of(&training_rows(&rows, args.select.train_samples)?, Some(len))?;
    let result = identify(&truncated(&probe.features, len)?, &gallery, &model)?;
    let scores: BTreeMap<u32, f64> = result.scores.iter().copied().collect();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "rank,user_id,score")?;
    for (rank, id) in result.ranking().into_iter().enumerate() {
        writeln!(out, "{},{id},{}", rank + 1, scores[&id])?;
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => EvaluationConfig::from_toml(&read_text(p)?)?,
        None => EvaluationConfig::default(),
    };
    let ds = load_dataset(&args.manifest)?;
    let report = run_evaluation(&ds, &cfg)?;
    let mut out = create(&args.out)?;
    write_report_csv(&mut out, &report)?;
    out.flush()?;
    if let Some(dir) = &args.scores_dir {
        for set in &report.scores {
            let path = dir.join(format!(
                "scores_{}_{}_{}.csv",
                set.region, set.spectrum, set.feature_length
            ));
            let mut w = create(&path)?;
            // all tests in one long-format file; probe ids are unique per test
            let mut first = true;
            for m in &set.tests {
                let mut buf = Vec::new();
                write_score_csv(&mut buf, m)?;
                let text = String::from_utf8(buf)?;
                let body = if first {
                    text.as_str()
                } else {
                    text.split_once('\n').map_or("", |(_, rest)| rest)
                };
                w.write_all(body.as_bytes())?;
                first = false;
            }
            w.flush()?;
        }
        let mut w = create(&dir.join("truth.csv"))?;
        write_truth_csv(&mut w, &report.truth)?;
        w.flush()?;
    }
    for row in &report.rows {
        println!(
            "{} {} {} len={} mean={:.2} std={:.2}",
            row.region, row.spectrum, row.rule, row.feature_length, row.mean, row.std
        );
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow!("sweep must be start:step:end, got {spec:?}"))?;
    let [start, step, end] = parts[..] else {
        bail!("sweep must be start:step:end, got {spec:?}");
    };
    if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || end < start || step <= 0.0 {
        bail!("sweep {spec:?} must satisfy 0 <= start <= end <= 1 and step > 0");
    }
    Ok(alpha_grid(start, step, end))
}

fn fuse(args: FuseArgs) -> Result<()> {
    let polarity = match args.polarity {
        PolarityArg::Lower => Polarity::LowerIsBetter,
        PolarityArg::Higher => Polarity::HigherIsBetter,
    };
    let normalization = match args.normalization {
        NormArg::None => Normalization::None,
        NormArg::Zscore => Normalization::ZScore,
        NormArg::Minmax => Normalization::MinMax,
    };
    let vis = read_score_csv(open(&args.vis_scores)?, polarity)?;
    let th = read_score_csv(open(&args.th_scores)?, polarity)?;

    if let Some(spec) = &args.sweep {
        if !matches!(args.rule, RuleArg::Weighted) {
            bail!("--sweep only applies to --rule weighted");
        }
        let truth_path = args
            .truth
            .as_ref()
            .ok_or_else(|| anyhow!("--sweep needs --truth"))?;
        let truth = read_truth_csv(open(truth_path)?)?;
        let rows = sweep_table(&vis, &th, &truth, &parse_grid(spec)?, normalization)?;
        let mut out = create(&args.out)?;
        write_sweep_csv(&mut out, &rows)?;
        out.flush()?;
        if let Some(best) = rows
            .iter()
            .max_by(|a, b| a.mean.total_cmp(&b.mean).then(b.alpha.total_cmp(&a.alpha)))
        {
            println!("best alpha {} with mean rate {:.2}", best.alpha, best.mean);
        }
        return Ok(());
    }

    let rule = match args.rule {
        RuleArg::Product => FusionRule::Product,
        RuleArg::Mean => FusionRule::Mean,
        RuleArg::Median => FusionRule::Median,
        RuleArg::Max => FusionRule::Max,
        RuleArg::Min => FusionRule::Min,
        RuleArg::Vote => FusionRule::MajorityVote,
        RuleArg::Weighted => FusionRule::Weighted(
            args.alpha
                .ok_or_else(|| anyhow!("--rule weighted needs --alpha or --sweep"))?,
        ),
    };
    if args.alpha.is_some() && !matches!(args.rule, RuleArg::Weighted) {
        bail!("--alpha only applies to --rule weighted");
    }
    let mut out = create(&args.out)?;
    match fuse_systems(&[vis, th], rule, normalization)? {
        Fused::Scores(m) => write_score_csv(&mut out, &m)?,
        Fused::Decisions(labels) => {
            let probes = read_score_csv(open(&args.vis_scores)?, polarity)?;
            writeln!(out, "probe_id,class_id")?;
            for (p, label) in probes.probe_ids().iter().zip(labels) {
                writeln!(out, "{p},{label}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Segment(a) => segment(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Identify(a) => identify_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Fuse(a) => fuse(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
