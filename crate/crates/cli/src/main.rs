//! `sketchseg`: data generation, training, inference, evaluation and part
//! retrieval from the command line. Exit status is 0 on success, 2 on a
//! usage error and 1 when the operation itself fails.

use std::error::Error;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use sketchseg_core::network::{
    load_checkpoint, save_checkpoint, NetworkSpec, Profile, TrainConfig, Trainer, CANONICAL_SIDE, REDUCED_SIDE,
};
use sketchseg_core::pipeline::{apply_labels, segment_sketch, SegmentOptions, Solver};
use sketchseg_core::refine::EnergyParams;
use sketchseg_core::render::{
    augment_scale, load_dataset, load_labeled_mesh, make_edge_map_sample, sample_viewpoints, synth_sketch_dataset,
    toy_chair, toy_chair_labels, write_dataset, CategorySpec, LabeledMesh, ViewGrid, MANIFEST_NAME,
};
use sketchseg_core::retrieval::{assemble, build_feature_db, query_parts, sketch_part_features, FeatureDb, Selection};
use sketchseg_core::metrics::{evaluate_dataset, reports_csv, EvalConfig, DEFAULT_BATCH_SIZES};
use sketchseg_core::sketch::{parse_sketch, serialize_sketch, LabelSet};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "sketchseg", version, about = "Part segmentation of freehand sketches")]
struct Cli {
    /// Random seed (training order, initialization, synthesis, evaluation batches).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Cost of leaving the network's label at a point.
    #[arg(long, global = true, value_parser = non_negative)]
    cd: Option<f64>,
    /// Cost of a label change between neighboring points.
    #[arg(long, global = true, value_parser = non_negative)]
    cs: Option<f64>,
    /// Batch size; `eval` takes a comma-separated list.
    #[arg(long, global = true, value_delimiter = ',', value_parser = clap::value_parser!(u64).range(1..))]
    batch: Vec<u64>,
    /// Network size.
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Canonical)]
    profile: ProfileArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Canonical,
    Reduced,
}

impl ProfileArg {
    fn profile(self) -> Profile {
        match self {
            ProfileArg::Canonical => Profile::Canonical,
            ProfileArg::Reduced => Profile::Reduced,
        }
    }

    fn side(self) -> usize {
        match self {
            ProfileArg::Canonical => CANONICAL_SIDE,
            ProfileArg::Reduced => REDUCED_SIDE,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Dp,
    Alpha,
}

#[derive(Subcommand)]
enum Command {
    /// Render labeled edge maps of part-segmented meshes into a dataset.
    Datagen(DatagenArgs),
    /// Write a procedural labeled sketch dataset.
    Synth(SynthArgs),
    /// Train a network on a dataset and save the checkpoint.
    Train(TrainArgs),
    /// Segment one sketch file and write it back with labels.
    Infer(InferArgs),
    /// Evaluate a checkpoint on a labeled sketch dataset; CSV on stdout.
    Eval(EvalArgs),
    /// Build the part feature database of a mesh collection.
    Features(FeaturesArgs),
    /// Rank database parts against each part of a sketch; JSON on stdout.
    Retrieve(RetrieveArgs),
    /// Place selected parts by least squares; JSON on stdout.
    Assemble(AssembleArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct MeshArgs {
    /// OBJ files or directories of them, parts in `part_<name>` groups.
    #[arg(long, num_args = 1..)]
    meshes: Vec<PathBuf>,
    /// Use this many built-in box chairs instead of files.
    #[arg(long, conflicts_with = "meshes")]
    toy: Option<usize>,
    /// Label names, background first, e.g. `background,back,seat,leg`.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    #[arg(long)]
    category: Option<String>,
    /// Camera azimuth steps around each mesh.
    #[arg(long, default_value_t = 12)]
    azimuths: usize,
}

impl MeshArgs {
    fn load(&self) -> Result<(LabelSet, Vec<LabeledMesh>)> {
        if let Some(n) = self.toy {
            return Ok((toy_chair_labels(), (0..n as u32).map(toy_chair).collect()));
        }
        if self.meshes.is_empty() {
            return Err("give --meshes or --toy".into());
        }
        let category = self.category.clone().ok_or("--category is required with --meshes")?;
        let labels = LabelSet::new(category, self.labels.clone())?;
        let mut files = Vec::new();
        for p in &self.meshes {
            if p.is_dir() {
                let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                    .map(|e| e.map(|e| e.path()))
                    .collect::<std::io::Result<_>>()?;
                found.retain(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")));
                found.sort();
                files.extend(found);
            } else {
                files.push(p.clone());
            }
        }
        let meshes = files
            .iter()
            .map(|f| load_labeled_mesh(f, &labels).map_err(|e| format!("{}: {e}", f.display())))
            .collect::<std::result::Result<_, _>>()?;
        Ok((labels, meshes))
    }

    fn grid(&self) -> ViewGrid {
        ViewGrid {
            n_azimuth: self.azimuths,
            ..ViewGrid::default()
        }
    }
}

#[derive(Args)]
struct DatagenArgs {
    #[command(flatten)]
    meshes: MeshArgs,
    /// Drop edges hidden behind other parts.
    #[arg(long)]
    depth_tested: bool,
    /// Add non-uniformly scaled copies of every mesh.
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Built-in category: lamp or chair.
    #[arg(long, default_value = "lamp")]
    category: String,
    #[arg(long, short)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest or its directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    /// Report the network's labels without refinement.
    #[arg(long)]
    no_refine: bool,
    #[arg(long, value_enum, default_value_t = SolverArg::Dp)]
    solver: SolverArg,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    refine: RefineArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset manifest or its directory; every entry needs a sketch.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    no_refine: bool,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    meshes: MeshArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    db: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Use the labels stored in the sketch file instead of segmenting it.
    #[arg(long)]
    given_labels: bool,
}

#[derive(Args)]
struct AssembleArgs {
    #[arg(long)]
    db: PathBuf,
    /// `{"parts":[{"label","mesh"}]}`, or `retrieve` output whose top
    /// candidates are taken.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// Configuration file; the SKSEG_CONFIG variable takes precedence.
    #[arg(long, default_value = "sketchseg.conf")]
    config: PathBuf,
    #[arg(long)]
    listen: Option<String>,
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

fn batches(b: &[u64]) -> Vec<usize> {
    b.iter().map(|&x| x as usize).collect()
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_NAME)
    } else {
        p.to_path_buf()
    }
}

fn emit(value: &Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

impl Cli {
    fn params(&self) -> EnergyParams {
        let d = EnergyParams::default();
        EnergyParams {
            c_d: self.cd.unwrap_or(d.c_d),
            c_s: self.cs.unwrap_or(d.c_s),
        }
    }

    fn segment_options(&self, r: &RefineArgs) -> SegmentOptions {
        SegmentOptions {
            params: self.params(),
            refine: !r.no_refine,
            solver: match r.solver {
                SolverArg::Dp => Solver::Dp,
                SolverArg::Alpha => Solver::AlphaExpansion { seed: self.seed },
            },
        }
    }

    fn run(&self) -> Result<()> {
        match &self.command {
            Command::Datagen(a) => self.datagen(a),
            Command::Synth(a) => self.synth(a),
            Command::Train(a) => self.train(a),
            Command::Infer(a) => self.infer(a),
            Command::Eval(a) => self.eval(a),
            Command::Features(a) => self.features(a),
            Command::Retrieve(a) => self.retrieve(a),
            Command::Assemble(a) => assemble_cmd(a),
            Command::Serve(a) => self.serve(a),
        }
    }

    fn datagen(&self, a: &DatagenArgs) -> Result<()> {
        let (labels, meshes) = a.meshes.load()?;
        let cameras = sample_viewpoints(&a.meshes.grid(), self.profile.side());
        let mut samples = Vec::new();
        for mesh in &meshes {
            let variants = if a.augment { augment_scale(mesh, &[0.5, 1.5])? } else { vec![mesh.clone()] };
            for v in &variants {
                for cam in &cameras {
                    samples.push(make_edge_map_sample(v, cam, a.depth_tested)?);
                }
            }
            log::info!("{}: {} samples so far", mesh.id, samples.len());
        }
        let manifest = write_dataset(&a.out, &labels, &samples, None)?;
        log::info!("wrote {} samples to {}", samples.len(), manifest.display());
        Ok(())
    }

    fn synth(&self, a: &SynthArgs) -> Result<()> {
        let spec = CategorySpec::by_name(&a.category).ok_or_else(|| format!("unknown category {:?}", a.category))?;
        let data = synth_sketch_dataset(&spec, a.n, self.seed, self.profile.side())?;
        let (samples, sketches): (Vec<_>, Vec<_>) = data.into_iter().map(|s| (s.sample, s.sketch)).unzip();
        let manifest = write_dataset(&a.out, &spec.labels(), &samples, Some(&sketches))?;
        log::info!("wrote {} sketches to {}", samples.len(), manifest.display());
        Ok(())
    }

    fn train(&self, a: &TrainArgs) -> Result<()> {
        let data = load_dataset(manifest_path(&a.data))?;
        let spec = NetworkSpec::for_profile(self.profile.profile(), data.labels.k())?;
        let mut cfg = TrainConfig {
            steps: a.steps,
            seed: self.seed,
            ..TrainConfig::default()
        };
        if let Some(&b) = self.batch.first() {
            cfg.batch = b as usize;
        }
        if let Some(lr) = a.lr {
            cfg.adam.lr = lr;
        }
        let mut trainer = Trainer::new(&data.samples, spec, data.labels.clone(), cfg)?;
        let started = Instant::now();
        for step in 1..=a.steps {
            let loss = trainer.step()?;
            if step == 1 || step % cfg.log_every.max(1) == 0 || step == a.steps {
                log::info!("step {step}/{} loss {loss:.4} ({:.1}s)", a.steps, started.elapsed().as_secs_f64());
            }
        }
        let (model, _) = trainer.finish();
        save_checkpoint(&model, &a.out)?;
        Ok(())
    }

    fn infer(&self, a: &InferArgs) -> Result<()> {
        let model = load_checkpoint(&a.model)?;
        let sketch = parse_sketch(&std::fs::read(&a.input)?)?;
        let result = segment_sketch(&sketch, &model, &self.segment_options(&a.refine))?;
        log::info!(
            "rasterize {:.1} ms, infer {:.1} ms, refine {:.1} ms",
            result.timing.rasterize,
            result.timing.infer,
            result.timing.refine
        );
        let bytes = serialize_sketch(&apply_labels(&sketch, &result.labels));
        match &a.out {
            Some(p) => std::fs::write(p, bytes)?,
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(&bytes)?;
                writeln!(out)?;
            }
        }
        Ok(())
    }

    fn eval(&self, a: &EvalArgs) -> Result<()> {
        let model = load_checkpoint(&a.model)?;
        let data = load_dataset(manifest_path(&a.data))?;
        let sketches = data
            .sketches
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or("every dataset entry needs a sketch file")?;
        let cfg = EvalConfig {
            params: self.params(),
            batch_sizes: if self.batch.is_empty() { DEFAULT_BATCH_SIZES.to_vec() } else { batches(&self.batch) },
            refine: !a.no_refine,
            seed: self.seed,
            ..EvalConfig::default()
        };
        let reports = evaluate_dataset(&model, &sketches, &cfg)?;
        print!("{}", reports_csv(&reports));
        Ok(())
    }

    fn features(&self, a: &FeaturesArgs) -> Result<()> {
        let model = load_checkpoint(&a.model)?;
        let (_, meshes) = a.meshes.load()?;
        let cameras = sample_viewpoints(&a.meshes.grid(), model.spec.input_side);
        let db = build_feature_db(&model, &meshes, &cameras)?;
        db.save(&a.out)?;
        log::info!("{} part features from {} meshes", db.len(), meshes.len());
        Ok(())
    }

    fn retrieve(&self, a: &RetrieveArgs) -> Result<()> {
        let model = load_checkpoint(&a.model)?;
        let db = FeatureDb::load(&a.db)?;
        let sketch = parse_sketch(&std::fs::read(&a.input)?)?;
        let labels = if a.given_labels {
            sketch
                .strokes
                .iter()
                .map(|s| s.gt_labels.clone())
                .collect::<Option<Vec<_>>>()
                .ok_or("sketch has unlabeled strokes")?
        } else {
            let opts = SegmentOptions {
                params: self.params(),
                ..SegmentOptions::default()
            };
            segment_sketch(&sketch, &model, &opts)?.labels
        };
        let parts: Vec<Value> = sketch_part_features(&model, &sketch, &labels)?
            .into_iter()
            .map(|(label, f)| json!({"label": label, "candidates": query_parts(&f, label, &db, a.top)}))
            .collect();
        emit(&json!({ "parts": parts }))
    }

    fn serve(&self, a: &ServeArgs) -> Result<()> {
        let mut config = sketchseg_service::Config::load(sketchseg_service::config_path(&a.config))?;
        if let Some(l) = &a.listen {
            config.listen = l.clone();
        }
        if let Some(cd) = self.cd {
            config.params.c_d = cd;
        }
        if let Some(cs) = self.cs {
            config.params.c_s = cs;
        }
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(sketchseg_service::serve(config))?;
        Ok(())
    }
}

/// Selections from either an explicit list or ranked retrieval output.
fn selections(doc: &Value) -> Result<Vec<Selection>> {
    let parts = doc.get("parts").and_then(Value::as_array).ok_or("input needs a \"parts\" array")?;
    parts
        .iter()
        .map(|p| {
            let label = p.get("label").and_then(Value::as_u64).ok_or("part without a label")? as u32;
            let mesh = match p.get("candidates") {
                Some(c) => c.get(0).and_then(|c| c.get("mesh")),
                None => p.get("mesh"),
            }
            .and_then(Value::as_str)
            .ok_or_else(|| format!("no mesh for part {label}"))?;
            Ok(Selection {
                label,
                mesh: mesh.to_string(),
            })
        })
        .collect()
}

fn assemble_cmd(a: &AssembleArgs) -> Result<()> {
    let db = FeatureDb::load(&a.db)?;
    let doc: Value = serde_json::from_slice(&std::fs::read(&a.input)?)?;
    let asm = assemble(&selections(&doc)?, &db)?;
    emit(&json!({"placed": asm.placed, "residual": asm.residual}))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match cli.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
