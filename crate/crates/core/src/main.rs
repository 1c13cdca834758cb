use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use semsplat::consensus::{classify_matches, overlap_stats, resolve_consensus, ConsensusParams};
use semsplat::harness::bench::bench_render;
use semsplat::harness::dataset::{segmentation_from_maps, write_synthetic_dataset, DatasetReader};
use semsplat::harness::formats::{
    decode_label_map, decode_scalar_map, encode_label_map, encode_ppm, encode_scalar_map, format_class_table,
    parse_trajectory, read_scene, write_scene, CONFIDENCE_MAGIC, DEPTH_MAGIC,
};
use semsplat::harness::perturb::{ConfidenceModel, PerturbationSpec};
use semsplat::harness::pipeline::{run_pipeline, PipelineConfig};
use semsplat::harness::synth::{generate_synthetic, CameraSpec, SyntheticSceneSpec, TrajectorySpec, TABLETOP_CAMERA};
use semsplat::render::RenderConfig;
use semsplat::scene::{LabelRegistry, RemoveOutcome, DEFAULT_MAX_LABELS};
use semsplat::voting::{render_label_map, TopKContributorMatrix, DEFAULT_TOP_K, MIN_LABEL_COVERAGE};
use semsplat::{CameraIntrinsics, ScalarImage};

#[derive(Parser)]
#[command(name = "semsplat", version, about = "Semantic Gaussian-splatting mapping toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with perturbed segmentations.
    Synth(SynthArgs),
    /// Run the mapping pipeline over a dataset directory.
    Run(RunArgs),
    /// Render RGB, depth and labels of a scene from one pose.
    Render(RenderArgs),
    /// Edit a scene file.
    Manipulate(ManipulateArgs),
    /// One consensus step between an input and a rendered label map.
    Consensus(ConsensusArgs),
    /// Compare RGB-only and RGB+label render times.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    /// Objects on a ring, orbited by the camera.
    Tabletop,
    /// Objects in a row, passed by a panning camera.
    Shelf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Layout::Tabletop)]
    layout: Layout,
    #[arg(long, default_value_t = 8)]
    objects: usize,
    #[arg(long, default_value_t = 40)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 600)]
    gaussians_per_object: usize,
    #[arg(long, default_value_t = false)]
    permute: bool,
    #[arg(long, default_value_t = 0.0)]
    oversegment_prob: f64,
    #[arg(long, default_value_t = 0.0)]
    merge_prob: f64,
    #[arg(long, default_value_t = 0.8)]
    conf_base: f64,
    #[arg(long, default_value_t = 0.0)]
    conf_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    part_bias: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.85)]
    tau1: f64,
    #[arg(long, default_value_t = 0.9)]
    tau2: f64,
    #[arg(long, default_value_t = 0.1)]
    tau3: f64,
    #[arg(long, default_value_t = 0.06)]
    delta: f64,
    #[arg(long, default_value_t = 0.10)]
    theta: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    topk: usize,
    #[arg(long, default_value_t = 5)]
    keyframe_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_LABELS)]
    max_labels: u32,
    #[arg(long, default_value_t = 4)]
    densify_stride: usize,
    /// Skip scaling input confidences by rendered-label completeness.
    #[arg(long, default_value_t = false)]
    no_confidence_update: bool,
}

#[derive(Args)]
struct CameraArgs {
    /// Focal length in pixels; the principal point is the image center.
    #[arg(long, default_value_t = TABLETOP_CAMERA.focal)]
    focal: f64,
    #[arg(long, default_value_t = TABLETOP_CAMERA.width)]
    width: usize,
    #[arg(long, default_value_t = TABLETOP_CAMERA.height)]
    height: usize,
}

impl CameraArgs {
    fn intrinsics(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::centered(self.focal, self.width, self.height)?)
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Trajectory file; the pose is line `--frame`.
    #[arg(long, conflicts_with = "pose")]
    trajectory: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Camera-to-world pose as "tx ty tz qx qy qz qw".
    #[arg(long)]
    pose: Option<String>,
    #[command(flatten)]
    camera: CameraArgs,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    topk: usize,
    /// Output prefix; writes PREFIX.rgb.ppm, PREFIX.depth.ogdm, PREFIX.labels.oglm.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ManipulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    remove_label: u32,
}

#[derive(Args)]
struct ConsensusArgs {
    /// Input segmentation label map (OGLM).
    #[arg(long)]
    input: PathBuf,
    /// Input confidence map (OGCM); defaults to 1 everywhere.
    #[arg(long)]
    confidence: Option<PathBuf>,
    /// Rendered label map (OGLM).
    #[arg(long)]
    rendered: PathBuf,
    /// Confidence assumed for every rendered label.
    #[arg(long, default_value_t = 0.5)]
    rendered_confidence: f64,
    #[arg(long, default_value_t = 0.85)]
    tau1: f64,
    #[arg(long, default_value_t = 0.9)]
    tau2: f64,
    #[arg(long, default_value_t = 0.1)]
    tau3: f64,
    /// Where to write the consistent label map (OGLM).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    gaussians: usize,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 240)]
    height: usize,
    #[arg(long, default_value_t = 15)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match a.layout {
        Layout::Tabletop => SyntheticSceneSpec::tabletop(a.objects, a.frames, a.seed),
        Layout::Shelf => SyntheticSceneSpec::shelf(a.objects, a.frames, a.seed),
    };
    spec.gaussians_per_object = a.gaussians_per_object;
    let data = generate_synthetic(&spec, a.seed)?;
    let perturbation = PerturbationSpec {
        permute_labels: a.permute,
        oversegment_prob: a.oversegment_prob,
        merge_prob: a.merge_prob,
        confidence: ConfidenceModel {
            base: a.conf_base,
            noise: a.conf_noise,
            part_bias: a.part_bias,
        },
        seed: a.seed,
        ..Default::default()
    };
    write_synthetic_dataset(&a.out, &data, &perturbation)?;
    write_scene(&a.out.join("scene_gt.ogs"), &data.scene)?;
    write(&a.out.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
    write(&a.out.join("perturbation.json"), serde_json::to_string_pretty(&perturbation)?)?;
    info!("wrote {} frames to {}", data.frames.len(), a.out.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let config = PipelineConfig {
        tau1: a.tau1,
        tau2: a.tau2,
        tau3: a.tau3,
        delta: a.delta,
        theta: a.theta,
        top_k: a.topk,
        keyframe_every: a.keyframe_every,
        max_labels: a.max_labels,
        seed: a.seed,
        densify_stride: a.densify_stride,
        confidence_update: !a.no_confidence_update,
        ..Default::default()
    };
    let reader = DatasetReader::open(&a.data)?;
    let intrinsics = reader.manifest.intrinsics()?;
    let mut output = run_pipeline(&config, &intrinsics, reader.frames())?;
    std::fs::create_dir_all(&a.out)?;
    write_scene(&a.out.join("scene.ogs"), &output.scene)?;
    write(&a.out.join("classes.txt"), format_class_table(&output.scene.global_table))?;
    if let Some(labels) = &output.final_labels {
        write(&a.out.join("final.labels.oglm"), encode_label_map(labels))?;
    }
    write(&a.out.join("metrics.json"), serde_json::to_string_pretty(&output.metrics)?)?;
    if let Some((last, _)) = reader.len().checked_sub(1).map(|i| reader.frame(i)).transpose()? {
        let timing = bench_render(&output.scene, &last.pose, &intrinsics, &RenderConfig::default(), a.topk, 5)?;
        write(&a.out.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
        output.metrics.timing = Some(timing);
    }
    let m = &output.metrics;
    println!(
        "frames={} final_miou={} final_acc={} labels={} pruned={} render_ratio={}",
        m.frames.len(),
        m.final_miou.map_or("n/a".into(), |v| format!("{v:.4}")),
        m.final_acc.map_or("n/a".into(), |v| format!("{v:.4}")),
        m.final_label_count,
        m.total_pruned,
        m.timing.map_or("n/a".into(), |t| format!("{:.3}", t.ratio)),
    );
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let scene = read_scene(&a.scene, u32::MAX)?;
    let poses = match (&a.trajectory, &a.pose) {
        (Some(path), None) => parse_trajectory(&String::from_utf8_lossy(&read(path)?))?,
        (None, Some(line)) => parse_trajectory(line)?,
        _ => bail!("give exactly one of --trajectory or --pose"),
    };
    let pose = poses
        .get(a.frame)
        .with_context(|| format!("trajectory has no frame {}", a.frame))?;
    let intrinsics = a.camera.intrinsics()?;
    let lr = render_label_map(&scene, pose, &intrinsics, &RenderConfig::default(), a.topk)?;
    let depth = ScalarImage::from_fn(intrinsics.width, intrinsics.height, |x, y| {
        lr.frame
            .surface_depth(y * intrinsics.width + x, MIN_LABEL_COVERAGE)
            .unwrap_or(0.0)
    });
    write(&with_suffix(&a.out, ".rgb.ppm"), encode_ppm(&lr.frame.rgb))?;
    write(&with_suffix(&a.out, ".depth.ogdm"), encode_scalar_map(DEPTH_MAGIC, &depth))?;
    write(&with_suffix(&a.out, ".labels.oglm"), encode_label_map(&lr.labels))?;
    Ok(())
}

fn manipulate(a: ManipulateArgs) -> Result<()> {
    let mut scene = read_scene(&a.scene, u32::MAX)?;
    match scene.remove_label(a.remove_label)? {
        RemoveOutcome::Removed(n) => println!("removed {n} gaussians with label {}", a.remove_label),
        RemoveOutcome::UnknownLabel => println!("label {} not present; scene unchanged", a.remove_label),
    }
    write_scene(&a.out, &scene)?;
    Ok(())
}

fn consensus(a: ConsensusArgs) -> Result<()> {
    let labels = decode_label_map(&read(&a.input)?)?;
    let conf = match &a.confidence {
        Some(p) => decode_scalar_map(CONFIDENCE_MAGIC, &read(p)?)?,
        None => ScalarImage::filled(labels.width(), labels.height(), 1.0),
    };
    let input = segmentation_from_maps(labels, &conf)?;
    let rendered = decode_label_map(&read(&a.rendered)?)?;
    let mut registry = LabelRegistry::new(DEFAULT_MAX_LABELS);
    let top = rendered.labels().last().copied().unwrap_or(0);
    for _ in 0..top {
        registry.allocate(a.rendered_confidence)?;
    }
    let params = ConsensusParams {
        tau1: a.tau1,
        tau2: a.tau2,
        tau3: a.tau3,
        ..Default::default()
    };
    params.validate()?;
    let stats = overlap_stats(&input.label_map, &rendered)?;
    let cls = classify_matches(&stats, &params);
    let empty = TopKContributorMatrix::from_pixels(
        rendered.width(),
        rendered.height(),
        1,
        vec![Vec::new(); rendered.len()],
    )?;
    let outcome = resolve_consensus(&input, &rendered, &mut registry, &cls, &empty)?;
    let kinds: BTreeMap<u32, String> = cls.by_input.iter().map(|(l, k)| (*l, format!("{k:?}"))).collect();
    let report = serde_json::json!({
        "classification": kinds,
        "mapping": outcome.mapping,
        "new_labels": outcome.new_labels,
        "decayed_labels": outcome.decayed_labels,
        "relabel_commands": outcome.relabel_commands.len(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &a.out {
        write(out, encode_label_map(&outcome.consistent_map))?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    const OBJECTS: usize = 8;
    let mut spec = SyntheticSceneSpec::tabletop(OBJECTS, 1, a.seed);
    spec.gaussians_per_object = a.gaussians.div_ceil(OBJECTS).max(8);
    spec.camera = CameraSpec {
        focal: TABLETOP_CAMERA.focal * a.width as f64 / TABLETOP_CAMERA.width as f64,
        width: a.width,
        height: a.height,
    };
    if let TrajectorySpec::Orbit { frames, .. } = &mut spec.trajectory {
        *frames = 1;
    }
    let data = generate_synthetic(&spec, a.seed)?;
    let pose = data.frames[0].pose;
    let timing = bench_render(
        &data.scene,
        &pose,
        &data.intrinsics,
        &RenderConfig::default(),
        DEFAULT_TOP_K,
        a.repetitions,
    )?;
    println!(
        "gaussians={} size={}x{} rgb_ms={:.3} rgb_label_ms={:.3} ratio={:.3}",
        data.scene.len(),
        a.width,
        a.height,
        timing.rgb_ms,
        timing.rgb_label_ms,
        timing.ratio
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Render(a) => render(a),
        Command::Manipulate(a) => manipulate(a),
        Command::Consensus(a) => consensus(a),
        Command::Bench(a) => bench(a),
    }
}
