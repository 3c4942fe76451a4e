use std::path::Path;
use std::time::Instant;

use polaffini::affine::{read_affine, write_affine, AffineTransform, PointSet};
use polaffini::evaluation::{dice as dice_report, jacobian_report};
use polaffini::features::{extract_centroids, pair_point_sets, LabelSelection, LabelVolume};
use polaffini::graph::NeighborhoodGraph;
use polaffini::grid::Grid;
use polaffini::polyaffine::{
    estimate_polyaffine_with_graph, invert_transform, load_result, save_result, EstimateParams, Model,
    PolyaffineResult, ResultMetadata, BACKGROUND_FILE, FULL_DISPLACEMENT_FILE, PARAMS_FILE,
};
use polaffini::synth::{generate, GroundTruth, SynthSpec, Warp};
use polaffini::volume::{read_volume, resample, write_volume, Interpolation, SpatialTransform, INTENT_DISPLACEMENT};
use polaffini::{Error, Stage};
use serde_json::json;

use crate::{ApplyArgs, DiceArgs, EstimateArgs, Failure, Format, Interp, InvertArgs, JacobianArgs, SynthArgs, WarpKind};

pub const GRAPH_FILE: &str = "graph.txt";
pub const TIMING_FILE: &str = "timing.json";

type Outcome = Result<(), Failure>;

fn loading(e: Error) -> Error {
    Error::Stage {
        stage: Stage::Loading,
        source: Box::new(e),
    }
}

fn read_labels(path: &Path) -> Result<LabelVolume, Error> {
    let volume = read_volume(path).map_err(loading)?;
    LabelVolume::try_from(&volume).map_err(loading)
}

fn read_selection(path: Option<&Path>) -> Result<LabelSelection, Error> {
    match path {
        Some(p) => LabelSelection::read(p).map_err(loading),
        None => Ok(LabelSelection::all()),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| {
        Failure::Library(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| {
        Failure::Library(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// A transformation read from disk: an estimate directory or an affine file.
enum Transform {
    Affine(AffineTransform),
    Dense(Box<PolyaffineResult>),
}

impl SpatialTransform for Transform {
    fn map_point(&self, x: [f64; 3]) -> ([f64; 3], bool) {
        match self {
            Transform::Affine(a) => a.map_point(x),
            Transform::Dense(r) => r.map_point(x),
        }
    }
}

fn read_transform(path: &Path) -> Result<Transform, Error> {
    if path.is_dir() {
        if path.join(FULL_DISPLACEMENT_FILE).exists() {
            Ok(Transform::Dense(Box::new(load_result(path).map_err(loading)?)))
        } else {
            Ok(Transform::Affine(read_affine(path.join(BACKGROUND_FILE)).map_err(loading)?))
        }
    } else {
        Ok(Transform::Affine(read_affine(path).map_err(loading)?))
    }
}

fn affine_metadata(svf_downsample: usize) -> ResultMetadata {
    ResultMetadata {
        model: Model::Affine,
        sigma: None,
        sigma_auto: false,
        background_weight: 0.0,
        steps: 1,
        svf_downsample,
        reference_labels: 0,
        moving_labels: 0,
        labels: Vec::new(),
        fallbacks: Vec::new(),
        triangulation_jittered: false,
    }
}

pub fn estimate(args: EstimateArgs, threads: Option<usize>) -> Outcome {
    let reference = read_labels(&args.reference)?;
    let moving = read_labels(&args.moving)?;
    let selection = read_selection(args.labels.as_deref())?;
    let params = EstimateParams {
        model: args.model,
        sigma: args.sigma,
        background_weight: args.background_weight,
        steps: args.steps,
        svf_downsample: args.svf_downsample,
        threads: None,
    };
    let graph = match &args.graph {
        Some(path) => {
            let x: PointSet = extract_centroids(&reference, &selection)?;
            let y = extract_centroids(&moving, &selection)?;
            let (x, _) = pair_point_sets(&x, &y)?;
            Some(NeighborhoodGraph::read(path, &x).map_err(loading)?)
        }
        None => None,
    };

    let start = Instant::now();
    let (result, graph_used) = estimate_polyaffine_with_graph(&reference, &moving, &selection, &params, graph.as_ref())?;
    let seconds = start.elapsed().as_secs_f64();

    let out = &args.out;
    if args.model == Model::Affine {
        create_dir(out)?;
        write_affine(&result.background, out.join(BACKGROUND_FILE))?;
        write_json(&out.join(PARAMS_FILE), &serde_json::to_value(&result.metadata).expect("metadata serializes"))?;
    } else {
        save_result(&result, out)?;
    }
    if args.save_graph {
        if let Some(g) = &graph_used {
            g.write(&out.join(GRAPH_FILE))?;
        }
    }
    if args.record_timing {
        write_json(
            &out.join(TIMING_FILE),
            &json!({ "estimate_seconds": seconds, "threads": threads }),
        )?;
    }
    let summary = json!({
        "command": "estimate",
        "model": result.metadata.model,
        "points": result.metadata.labels.len(),
        "fallbacks": result.metadata.fallbacks.len(),
        "seconds": seconds,
        "max_displacement_mm": result.full_displacement.max_norm(),
        "out": out,
    });
    println!("{summary}");
    Ok(())
}

pub fn apply(args: ApplyArgs) -> Outcome {
    let moving = read_volume(&args.moving).map_err(loading)?;
    let reference = read_volume(&args.reference).map_err(loading)?;
    let transform = read_transform(&args.transform)?;
    let interpolation = match args.interp {
        Interp::Nearest => Interpolation::Nearest,
        Interp::Trilinear => Interpolation::Trilinear,
    };
    let (warped, report) = resample(&moving, &transform, reference.grid(), interpolation).map_err(|e| match e {
        Error::InterpolationMismatch => Failure::Usage(format!("{e}; use --interp nearest")),
        other => Failure::Library(other),
    })?;
    write_volume(&warped, &args.out)?;
    println!(
        "{}",
        json!({
            "command": "apply",
            "voxels": report.voxels,
            "out_of_domain": report.out_of_domain,
            "out": args.out,
        })
    );
    Ok(())
}

pub fn dice(args: DiceArgs) -> Outcome {
    let reference = read_labels(&args.reference)?;
    let warped = read_labels(&args.warped)?;
    let selection = read_selection(args.labels.as_deref())?;
    let report = dice_report(&reference, &warped, &selection)?;
    match args.format {
        Format::Json => {
            let mut value = serde_json::to_value(&report).expect("report serializes");
            if args.weighted {
                value["weighted_mean_dice"] = json!(report.volume_weighted_mean());
            }
            println!("{value}");
        }
        Format::Table => {
            print!("{}", report.to_table());
            if args.weighted {
                println!("{:>8} {:>45.4}", "weighted", report.volume_weighted_mean());
            }
        }
    }
    Ok(())
}

pub fn jacobian(args: JacobianArgs) -> Outcome {
    let result = match read_transform(&args.transform)? {
        Transform::Dense(r) => *r,
        Transform::Affine(a) => {
            let Some(path) = &args.reference else {
                return Err(Failure::Usage("an affine transform needs --ref to define the grid".into()));
            };
            let grid = read_volume(path).map_err(loading)?.grid().clone();
            PolyaffineResult::from_affine(a, &grid, affine_metadata(1))?
        }
    };
    let report = jacobian_report(&result)?;
    match args.format {
        Format::Json => println!("{}", serde_json::to_value(report).expect("report serializes")),
        Format::Table => print!("{}", report.to_table()),
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Outcome {
    let warp = match args.warp {
        WarpKind::Identity => Warp::Identity,
        WarpKind::Translation => Warp::translation(args.translate),
        WarpKind::Affine => {
            let Some(path) = &args.affine else {
                return Err(Failure::Usage("--warp affine needs --affine <file>".into()));
            };
            Warp::affine(&read_affine(path).map_err(loading)?)
        }
        WarpKind::Polyaffine => Warp::Polyaffine {
            anchors: args.anchors,
            magnitude: args.magnitude,
        },
        WarpKind::Fold => Warp::SinusoidalFold {
            amplitude: args.amplitude,
            period: args.period,
        },
    };
    let spec = SynthSpec {
        seed: args.seed,
        n_regions: args.regions,
        dims: args.dims,
        spacing: args.spacing,
        warp,
    };
    let pair = generate(&spec)?;
    let out = &args.out;
    create_dir(out)?;
    write_volume(&pair.reference_volume(), out.join("reference.nii.gz"))?;
    write_volume(&pair.moving_volume(), out.join("moving.nii.gz"))?;
    write_json(&out.join("spec.json"), &serde_json::to_value(&spec).expect("spec serializes"))?;
    let truth = match &pair.ground_truth {
        GroundTruth::Affine(a) => {
            let path = out.join("ground_truth_affine.txt");
            write_affine(a, &path)?;
            path
        }
        GroundTruth::Polyaffine(r) => {
            let path = out.join("ground_truth");
            save_result(r, &path)?;
            path
        }
        GroundTruth::Fold(u) => {
            let path = out.join("ground_truth_pullback.nii.gz");
            write_volume(&u.to_volume(INTENT_DISPLACEMENT), &path)?;
            path
        }
    };
    println!(
        "{}",
        json!({
            "command": "synth",
            "regions": pair.reference.labels().len(),
            "ground_truth": truth,
            "out": out,
        })
    );
    Ok(())
}

pub fn invert(args: InvertArgs) -> Outcome {
    let grid: Option<Grid> = match &args.reference {
        Some(p) => Some(read_volume(p).map_err(loading)?.grid().clone()),
        None => None,
    };
    match read_transform(&args.transform)? {
        Transform::Affine(a) => {
            create_dir(&args.out)?;
            write_affine(&a.invert()?, args.out.join(BACKGROUND_FILE))?;
        }
        Transform::Dense(r) => {
            let grid = grid.unwrap_or_else(|| r.grid().clone());
            let inverse = invert_transform(&r, &grid)?;
            save_result(&inverse, &args.out)?;
        }
    }
    println!("{}", json!({ "command": "invert", "out": args.out }));
    Ok(())
}
