//! Command handlers. Each one validates and computes everything first and
//! only then writes files, so a failing run leaves no partial outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use serde_json::json;

use liftaxle::annotations::{
    emit_training_config, parse_detection_labels, parse_segmentation_labels, write_labels,
    ClassMap, DatasetManifest, Geometry, GroundTruthInstance, ManifestEntry, ModelKind, SplitTag,
    TrainingOverrides, TruckObservation, split_dataset, summarize_dataset,
};
use liftaxle::backend::{
    generate_synthetic_scene, load_predictions, synthetic_class_map, ImageRecord,
    RecordedPredictions, SyntheticSceneSpec,
};
use liftaxle::cascade::{run_cascade, CascadeConfig, CascadeOutput, TravelDirection};
use liftaxle::geometry::PolygonMask;
use liftaxle::metrics::{
    confusion_matrix, evaluate, Cell, ConfusionMatrix, Detection, EvalOptions, IouKind,
};

use crate::run_manifest::RunManifest;
use crate::{
    CascadeArgs, Command, DatasetCommand, EvaluateArgs, GenConfigArgs, IouKindArg, LabelFormat,
    ModelKindArg, OutputFormat, SplitArgs, SummarizeArgs, SynthArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Cascade(args) => cmd_cascade(args),
        Command::Dataset { command } => match command {
            DatasetCommand::Split(args) => cmd_split(args),
            DatasetCommand::Summarize(args) => cmd_summarize(args),
            DatasetCommand::GenConfig(args) => cmd_gen_config(args),
            DatasetCommand::Synth(args) => cmd_synth(args),
        },
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn read_classes(path: &Path) -> Result<ClassMap> {
    let names: Vec<String> = read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        bail!("{}: no class names found", path.display());
    }
    Ok(ClassMap::new(names))
}

/// Image ids become file names; keep them inside the output directory.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || ".-_".contains(c) { c } else { '_' })
        .collect()
}

impl IouKindArg {
    fn kind(self) -> IouKind {
        match self {
            Self::Box => IouKind::Box,
            Self::Mask => IouKind::Mask,
        }
    }
}

fn confusion_value(matrix: &ConfusionMatrix) -> serde_json::Value {
    let n = matrix.class_names().len();
    let cell = |i: usize| {
        if i < n {
            Cell::Class(i as u32)
        } else {
            Cell::Background
        }
    };
    let mut labels: Vec<String> = matrix.class_names().to_vec();
    labels.push("background".to_string());
    let rows: Vec<Vec<u64>> = (0..=n)
        .map(|t| (0..=n).map(|p| matrix.count(cell(t), cell(p))).collect())
        .collect();
    json!({
        "classes": labels,
        "rows": rows,
        "confidence_threshold": matrix.confidence_threshold,
        "iou_threshold": matrix.iou_threshold,
    })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut meta = RunManifest::start("evaluate");
    meta.config("iou", args.iou);
    meta.config("conf", args.conf);
    meta.config("iou_kind", if args.iou_kind == IouKindArg::Mask { "mask" } else { "box" });
    meta.config("format", args.format.extension());
    meta.input(&args.ground_truth)?;
    meta.input(&args.classes)?;
    meta.input(&args.predictions)?;

    let classes = read_classes(&args.classes)?;
    let manifest = DatasetManifest::from_json(&read(&args.ground_truth)?, classes.clone())
        .map_err(|e| anyhow!("{}: {e}", args.ground_truth.display()))?;
    let recorded = load_predictions(&read(&args.predictions)?, &classes)
        .with_context(|| format!("loading {}", args.predictions.display()))?;

    let base = args.ground_truth.parent().unwrap_or_else(|| Path::new("."));
    let mut ground_truth = Vec::new();
    for entry in manifest.entries() {
        let label_path = base.join(&entry.label_path);
        let text = read(&label_path)?;
        let parsed = match args.label_format {
            LabelFormat::Detection => {
                parse_detection_labels(&text, entry.width, entry.height, &classes, &entry.image_id)
            }
            LabelFormat::Segmentation => parse_segmentation_labels(
                &text,
                entry.width,
                entry.height,
                &classes,
                &entry.image_id,
            ),
        }
        .with_context(|| format!("parsing {}", label_path.display()))?;
        ground_truth.extend(parsed);
    }

    let predictions = recorded.all_detections();
    let kind = args.iou_kind.kind();
    let options = EvalOptions {
        iou_threshold: args.iou,
        iou_kind: kind,
        count_confidence: args.conf,
        ..EvalOptions::default()
    };
    let report = evaluate(&predictions, &ground_truth, &classes, &options)?;
    let matrix = confusion_matrix(&predictions, &ground_truth, &classes, args.conf, args.iou, kind)?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let meta_value = (!args.no_manifest).then(|| meta.finish());
    let ext = args.format.extension();
    match args.format {
        OutputFormat::Json => {
            let mut doc = json!({ "report": report });
            if let Some(m) = &meta_value {
                doc["manifest"] = m.clone();
            }
            write(&args.out.join("report.json"), &serde_json::to_string_pretty(&doc)?)?;
            write(
                &args.out.join("confusion.json"),
                &serde_json::to_string_pretty(&confusion_value(&matrix))?,
            )?;
        }
        OutputFormat::Markdown => {
            write(&args.out.join("report.md"), &report.render_markdown())?;
            write(&args.out.join("confusion.md"), &matrix.render_markdown())?;
        }
        OutputFormat::Csv => {
            write(&args.out.join("report.csv"), &report.render_csv())?;
            write(&args.out.join("confusion.csv"), &matrix.render_csv())?;
        }
    }
    if let Some(m) = &meta_value {
        write(&args.out.join("run-manifest.json"), &serde_json::to_string_pretty(m)?)?;
    }
    eprintln!(
        "evaluated {} predictions against {} instances; report.{ext} and confusion.{ext} written to {}",
        predictions.len(),
        ground_truth.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_cascade(args: CascadeArgs) -> Result<()> {
    let mut meta = RunManifest::start("cascade");
    meta.input(&args.predictions)?;
    if let Some(config) = &args.config {
        meta.input(config)?;
    }

    let classes = match &args.classes {
        Some(path) => {
            meta.input(path)?;
            read_classes(path)?
        }
        None => synthetic_class_map(),
    };
    let recorded = load_predictions(&read(&args.predictions)?, &classes)
        .with_context(|| format!("loading {}", args.predictions.display()))?;

    let mut config = match &args.config {
        Some(path) => serde_json::from_str::<CascadeConfig>(&read(path)?)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?,
        None => CascadeConfig::default(),
    };
    if let Some(direction) = args.direction {
        config.direction = direction;
    }
    config.validate()?;
    for (key, value) in [
        ("truck_confidence", config.truck_confidence),
        ("axle_confidence", config.axle_confidence),
        ("lifted_confidence", config.lifted_confidence),
        ("association_iou", config.association_iou),
    ] {
        meta.config(key, value);
    }
    meta.config(
        "direction",
        match config.direction {
            TravelDirection::FrontLeft => "front-left",
            TravelDirection::FrontRight => "front-right",
        },
    );

    // Resolve every overlay source up front so a missing image aborts the
    // run before anything lands on disk.
    let overlay_sources: Vec<(String, PathBuf)> = if args.overlay {
        let images = args.images.as_ref().expect("clap enforces --images with --overlay");
        recorded
            .images()
            .map(|(id, _)| {
                let path = images.join(format!("{id}.png"));
                if !path.is_file() {
                    bail!("overlay source {} not found", path.display());
                }
                Ok((id.to_string(), path))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let split = |dets: &[Detection], class_id: u32| -> Vec<Detection> {
        dets.iter().filter(|d| d.class_id == class_id).cloned().collect()
    };
    let mut outputs: Vec<(String, CascadeOutput)> = Vec::new();
    for (id, record) in recorded.images() {
        let out = run_cascade(
            &split(&record.detections, args.truck_class),
            &split(&record.detections, args.axle_class),
            &split(&record.detections, args.lifted_class),
            &config,
        )?;
        outputs.push((id.to_string(), out));
    }

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut trucks = 0usize;
    for (id, out) in &outputs {
        let doc = json!({
            "image": id,
            "direction": config.direction,
            "records": out.records,
            "orphan_axles": out.orphan_axles.len(),
            "unassociated_masks": out.unassociated_masks.len(),
        });
        write(
            &args.out_dir.join(format!("{}.json", sanitize(id))),
            &serde_json::to_string_pretty(&doc)?,
        )?;
        trucks += out.records.len();
    }
    for (id, source) in &overlay_sources {
        let out = &outputs.iter().find(|(i, _)| i == id).expect("same id set").1;
        crate::overlay::render(source, &args.out_dir.join(format!("{}_overlay.png", sanitize(id))), out)?;
    }
    if !args.no_manifest {
        write(
            &args.out_dir.join("run-manifest.json"),
            &serde_json::to_string_pretty(&meta.finish())?,
        )?;
    }
    eprintln!(
        "cascade over {} images found {trucks} trucks; records written to {}",
        outputs.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let classes = read_classes(&args.classes)?;
    let manifest = DatasetManifest::from_json(&read(&args.manifest)?, classes)
        .map_err(|e| anyhow!("{}: {e}", args.manifest.display()))?;
    let split = split_dataset(&manifest, args.train_fraction, args.seed)?;
    let (train, val, _) = split.split_counts();
    write(&args.out, &split.to_json())?;
    eprintln!("split {} images into {train} train / {val} val (seed {})", manifest.len(), args.seed);
    Ok(())
}

fn cmd_summarize(args: SummarizeArgs) -> Result<()> {
    let classes = read_classes(&args.classes)?;
    let manifest = DatasetManifest::from_json(&read(&args.manifest)?, classes)
        .map_err(|e| anyhow!("{}: {e}", args.manifest.display()))?;
    let trucks: Vec<TruckObservation> = serde_json::from_str(&read(&args.trucks)?)
        .map_err(|e| anyhow!("{}: {e}", args.trucks.display()))?;
    let table = summarize_dataset(&manifest, &trucks).render_markdown();
    match &args.out {
        Some(path) => write(path, &table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_gen_config(args: GenConfigArgs) -> Result<()> {
    let kind = match args.kind {
        ModelKindArg::Detection => ModelKind::Detection,
        ModelKindArg::Segmentation => ModelKind::Segmentation,
    };
    let overrides = TrainingOverrides {
        epochs: args.epochs,
        batch: args.batch,
        optimizer: args.optimizer.clone(),
        lr0: args.lr0,
        scale: args.scale,
        fliplr: args.fliplr,
        shear: args.shear,
    };
    let rendered = emit_training_config(kind, &overrides)?.render();
    match &args.out {
        Some(path) => write(path, &rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

#[derive(Deserialize)]
struct SceneFile {
    scenes: Vec<SyntheticSceneSpec>,
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut meta = RunManifest::start("dataset synth");
    meta.input(&args.spec)?;

    let file: SceneFile = serde_json::from_str(&read(&args.spec)?)
        .map_err(|e| anyhow!("{}: {e}", args.spec.display()))?;
    if file.scenes.is_empty() {
        bail!("{}: spec contains no scenes", args.spec.display());
    }
    meta.config("scenes", file.scenes.len());

    let classes = synthetic_class_map();
    let mut recorded = RecordedPredictions::new(classes.clone());
    let mut entries = Vec::new();
    let mut label_files: Vec<(String, String)> = Vec::new();
    for spec in &file.scenes {
        let scene = generate_synthetic_scene(spec)?;
        // Everything goes out as polygons so one segmentation-format label
        // file carries boxes and masks alike.
        let polygons: Vec<GroundTruthInstance> = scene
            .ground_truth
            .iter()
            .map(|g| GroundTruthInstance {
                class_id: g.class_id,
                geometry: Geometry::Polygon(match &g.geometry {
                    Geometry::Polygon(p) => p.clone(),
                    Geometry::Box(b) => {
                        PolygonMask::rect(b.x_min(), b.y_min(), b.x_max(), b.y_max())
                            .expect("scene boxes are valid rectangles")
                    }
                }),
                image_id: g.image_id.clone(),
            })
            .collect();
        let text = write_labels(&polygons, scene.image_width, scene.image_height)?;
        let label_path = format!("labels/{}.txt", sanitize(&scene.image_id));
        label_files.push((label_path.clone(), text));
        entries.push(ManifestEntry {
            image_id: scene.image_id.clone(),
            width: scene.image_width,
            height: scene.image_height,
            label_path,
            split: SplitTag::Unassigned,
        });
        recorded.insert(
            scene.image_id.clone(),
            ImageRecord {
                width: scene.image_width,
                height: scene.image_height,
                detections: scene.predictions,
            },
        )?;
    }
    let manifest = DatasetManifest::new(entries, classes.clone())?;

    fs::create_dir_all(args.out_dir.join("labels"))
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (path, text) in &label_files {
        write(&args.out_dir.join(path), text)?;
    }
    write(&args.out_dir.join("manifest.json"), &manifest.to_json())?;
    write(&args.out_dir.join("predictions.json"), &recorded.to_json())?;
    write(&args.out_dir.join("classes.txt"), &format!("{}\n", classes.names().join("\n")))?;
    if !args.no_manifest {
        write(
            &args.out_dir.join("run-manifest.json"),
            &serde_json::to_string_pretty(&meta.finish())?,
        )?;
    }
    eprintln!(
        "materialized {} scenes into {}",
        file.scenes.len(),
        args.out_dir.display()
    );
    Ok(())
}
