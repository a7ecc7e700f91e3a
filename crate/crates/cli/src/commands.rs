use crate::args::*;
use crate::output::{config, fmt_opt, require_dir, require_file, write_json, Report};
use crate::{CliError, CliResult};
use occfield::camera::FramePoseTrack;
use occfield::feature_map::FeatureMap;
use occfield::gradcheck::{self, GradcheckConfig};
use occfield::grid::VoxelGrid;
use occfield::inference::{
    evaluate_labels, retrieval_benchmark, retrieve as retrieve_scores, segment as segment_grid, RetrieveOptions,
    SegmentationReport, SemanticGrid, SimilarityMode, Vocabulary, DEFAULT_TAU, FREE_LABEL,
};
use occfield::manifest::{sha256_file, Manifest};
use occfield::reducer::{reduce_feature_map, train_reducer, Reducer, ReducerTrainConfig};
use occfield::renderer::{render_feature_map, RenderSettings};
use occfield::scene_synth::{build_scene, map_path, SceneSpec, SPEC_FILE, TRACK_FILE};
use occfield::trainer::{default_far, fit_scene_from, initial_grid, FitConfig, OptimizerState, TargetMaps};
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const GRID_OUT: &str = "grid.occg";
pub const OPTIMIZER_OUT: &str = "optimizer.occa";
pub const FIT_REPORT: &str = "fit_report.json";
pub const LABELS_OUT: &str = "labels.occs";
pub const REDUCER_OUT: &str = "reducer.bin";
pub const VOCAB_OUT: &str = "vocab.json";

fn read_json<T: serde::de::DeserializeOwned>(flag: &str, path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(require_file(flag, path)?)?;
    serde_json::from_str(&text).map_err(|e| config(format!("{flag} {}: {e}", path.display())))
}

fn create_out(path: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(path).map_err(|e| config(format!("--out {}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn mode(raw_dot: bool) -> SimilarityMode {
    if raw_dot {
        SimilarityMode::RawDot
    } else {
        SimilarityMode::Cosine
    }
}

/// Loads a vocabulary, reducing it when a reducer is given, and checks it
/// against the grid's feature width.
fn load_vocab(path: &Path, reducer: Option<&Path>, grid: &VoxelGrid) -> CliResult<Vocabulary> {
    let mut vocab = Vocabulary::load(&require_file("--vocab", path)?)?;
    if let Some(r) = reducer {
        let reducer = Reducer::load(&require_file("--reducer", r)?)?;
        vocab = vocab.reduced(&reducer)?;
    }
    if vocab.dim() != grid.feature_dim() {
        return Err(config(format!(
            "--vocab: embeddings have {} dimensions but the grid stores {} (a --reducer may be missing)",
            vocab.dim(),
            grid.feature_dim()
        )));
    }
    Ok(vocab)
}

pub fn synth(a: &SynthArgs, _g: &GlobalArgs) -> CliResult<Report> {
    let mut spec = match &a.spec {
        Some(p) => SceneSpec::load(&require_file("--spec", p)?)?,
        None => SceneSpec::default_scene(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(c) = a.cameras {
        spec.orbit.count = c;
    }
    if let Some(n) = a.noise {
        spec.noise_std = n;
    }
    spec.validate()?;
    if a.dump_spec {
        let mut r = Report::new(serde_json::to_value(&spec)?);
        r.line(serde_json::to_string_pretty(&spec)?);
        return Ok(r);
    }
    let out = create_out(a.out.as_deref().expect("clap enforces --out"))?;
    let bundle = build_scene(&spec)?;
    let manifest = bundle.write(&out)?;
    let occupied = bundle.labels.occupied_count();
    let views = bundle.features.len();
    let mut r = Report::new(json!({
        "out": out,
        "voxels": bundle.grid.voxel_count(),
        "occupied": occupied,
        "classes": bundle.vocab.class_names(),
        "views": views,
        "near": bundle.near,
        "far": bundle.far,
        "files": manifest.files.len(),
    }));
    let [x, y, z] = spec.geometry.resolution;
    r.line(format!("synth: {x}×{y}×{z} grid, {occupied} occupied voxels, {} classes", bundle.vocab.len()));
    r.line(format!("{views} views, sampling [{:.3}, {:.3}]", bundle.near, bundle.far));
    r.line(format!("wrote {}", out.display()));
    Ok(r)
}

fn fit_config(a: &FitArgs, g: &GlobalArgs) -> CliResult<FitConfig> {
    let mut cfg: FitConfig = match &a.config {
        Some(p) => read_json("--config", p)?,
        None => FitConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag {
                cfg.$field = v.into();
            }
        )*};
    }
    set!(rays => n_rays_per_step, samples => n_samples_per_ray, horizon => horizon, steps => steps,
         lr => learning_rate, beta1 => beta1, beta2 => beta2, eps => eps, loss => loss,
         sample_mode => sample_mode, seed => rng_seed, density_scale => density_scale, tv_weight => tv_weight);
    if a.near.is_some() {
        cfg.near = a.near;
    }
    if a.far.is_some() {
        cfg.far = a.far;
    }
    if a.feature_norm_cap.is_some() {
        cfg.feature_norm_cap = a.feature_norm_cap;
    }
    if a.no_feature_norm_cap {
        cfg.feature_norm_cap = None;
    }
    if g.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Target maps for the views inside the horizon.
fn load_targets(dir: &Path, kind: &str, track: &FramePoseTrack, horizon: u32) -> CliResult<TargetMaps> {
    let mut maps = TargetMaps::new();
    for (o, c, _) in track.views(horizon) {
        let path = dir.join(map_path(kind, o, c));
        let map = FeatureMap::load(&require_file("--maps", &path)?)?;
        maps.insert((o, c), map);
    }
    Ok(maps)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    loss: &'static str,
    start_step: u64,
    steps: usize,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    near: f64,
    far: f64,
    zero_norm_hits: u64,
    out_of_grid_fraction: f64,
    config: &'a FitConfig,
    losses: &'a [f64],
}

pub fn fit(a: &FitArgs, g: &GlobalArgs) -> CliResult<Report> {
    let bundle = a.bundle.as_deref().map(|p| require_dir("--bundle", p)).transpose()?;
    let track_path = match (&a.track, &bundle) {
        (Some(t), _) => require_file("--track", t)?,
        (None, Some(b)) => require_file("--bundle", &b.join(TRACK_FILE))?,
        (None, None) => return Err(CliError::Usage("fit needs --bundle or --track".into())),
    };
    let maps_dir = match (&a.maps, &bundle) {
        (Some(m), _) => require_dir("--maps", m)?,
        (None, Some(b)) => b.clone(),
        (None, None) => return Err(CliError::Usage("fit needs --bundle or --maps".into())),
    };
    let init = a.init.as_deref().map(|p| require_file("--init", p)).transpose()?;
    let resume = match &a.resume {
        Some(d) => {
            let d = require_dir("--resume", d)?;
            Some((require_file("--resume", &d.join(GRID_OUT))?, require_file("--resume", &d.join(OPTIMIZER_OUT))?))
        }
        None => None,
    };
    if bundle.is_none() && init.is_none() && resume.is_none() {
        return Err(CliError::Usage("without --bundle the grid geometry must come from --init or --resume".into()));
    }
    let cfg = fit_config(a, g)?;
    let out = create_out(&a.out)?;

    let track = FramePoseTrack::load(&track_path)?;
    let kind = if cfg.loss.is_photometric() { "rgb" } else { "feat" };
    let targets = load_targets(&maps_dir, kind, &track, cfg.horizon)?;
    let mut inputs = json!({ "track": sha256_file(&track_path)? });
    let (grid, state) = if let Some((grid, opt)) = &resume {
        inputs["resume_grid"] = sha256_file(grid)?.into();
        (VoxelGrid::load(grid)?, Some(OptimizerState::load(opt)?))
    } else if let Some(p) = &init {
        inputs["init"] = sha256_file(p)?.into();
        (VoxelGrid::load(p)?, None)
    } else {
        let spec = SceneSpec::load(&bundle.as_ref().expect("checked above").join(SPEC_FILE))?;
        let dim = match targets.values().next() {
            Some(m) if !cfg.loss.is_photometric() => m.channels(),
            _ => spec.feature_dim,
        };
        (initial_grid(spec.geometry, dim, &cfg)?, None)
    };
    let start_step = state.as_ref().map_or(0, |s| s.step());

    let started = Instant::now();
    let fit = fit_scene_from(&track, &targets, &cfg, grid, state)?;
    let secs = started.elapsed().as_secs_f64();

    let mut manifest = Manifest::new("fit", cfg.rng_seed, json!({ "fit": cfg, "inputs": inputs }));
    fit.grid.save(&out.join(GRID_OUT))?;
    manifest.add_file(&out, GRID_OUT)?;
    fit.optimizer.save(&out.join(OPTIMIZER_OUT))?;
    manifest.add_file(&out, OPTIMIZER_OUT)?;
    let summary = FitSummary {
        loss: cfg.loss.name(),
        start_step,
        steps: fit.losses.len(),
        initial_loss: fit.initial_loss(),
        final_loss: fit.final_loss(),
        near: fit.near,
        far: fit.far,
        zero_norm_hits: fit.zero_norm_hits,
        out_of_grid_fraction: fit.out_of_grid_fraction,
        config: &cfg,
        losses: &fit.losses,
    };
    write_json(&out, FIT_REPORT, &summary, &mut manifest)?;
    manifest.save(&out)?;

    let mut json = serde_json::to_value(&summary)?;
    json.as_object_mut().expect("summary is an object").remove("losses");
    let mut r = Report::new(json);
    r.line(format!(
        "fit: {} steps of {} from step {start_step}, loss {} -> {}",
        summary.steps,
        summary.loss,
        summary.initial_loss.map_or("n/a".into(), |l| format!("{l:.4e}")),
        summary.final_loss.map_or("n/a".into(), |l| format!("{l:.4e}")),
    ));
    r.line(format!(
        "sampling [{:.3}, {:.3}], {} zero-norm targets, {:.1}% of samples outside the grid",
        fit.near,
        fit.far,
        fit.zero_norm_hits,
        100.0 * fit.out_of_grid_fraction
    ));
    r.line(format!("wrote {} in {secs:.1} s", out.join(GRID_OUT).display()));
    Ok(r)
}

pub fn render(a: &RenderArgs, _g: &GlobalArgs) -> CliResult<Report> {
    let grid = VoxelGrid::load(&require_file("--grid", &a.grid)?)?;
    let track = FramePoseTrack::load(&require_file("--track", &a.track)?)?;
    let far = a.far.unwrap_or_else(|| default_far(&track, grid.geometry()));
    let settings = RenderSettings {
        near: a.near,
        far,
        n_samples: a.samples,
        mode: a.sample_mode.into(),
        density_scale: a.density_scale,
        seed: a.seed,
    };
    let out = create_out(&a.out)?;
    std::fs::create_dir_all(out.join("maps"))?;
    let mut manifest = Manifest::new("render", a.seed, json!({ "render": settings, "grid": sha256_file(&a.grid)? }));
    let mut views = 0;
    for (o, c, cam) in track.views(a.horizon.unwrap_or(u32::MAX)) {
        let v = render_feature_map(&grid, cam, &settings)?;
        let mut maps = vec![("feat", &v.features), ("depth", &v.depth)];
        maps.extend(v.rgb.as_ref().map(|m| ("rgb", m)));
        for (kind, map) in maps {
            let rel = map_path(kind, o, c);
            map.save(&out.join(&rel))?;
            manifest.add_file(&out, &rel)?;
        }
        views += 1;
    }
    track.save(&out.join(TRACK_FILE))?;
    manifest.add_file(&out, TRACK_FILE)?;
    manifest.save(&out)?;
    let mut r = Report::new(json!({ "views": views, "near": a.near, "far": far, "out": out }));
    r.line(format!("render: {views} views over [{:.3}, {far:.3}] into {}", a.near, out.display()));
    Ok(r)
}

pub fn reduce(a: &ReduceArgs, _g: &GlobalArgs) -> CliResult<Report> {
    let vocab = Vocabulary::load(&require_file("--vocab", &a.vocab)?)?;
    let bundle = a.bundle.as_deref().map(|p| require_dir("--bundle", p)).transpose()?;
    let mut cfg: ReducerTrainConfig = match &a.config {
        Some(p) => read_json("--config", p)?,
        None => ReducerTrainConfig::default(),
    };
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.final_lr_fraction {
        cfg.final_lr_fraction = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let out = create_out(&a.out)?;
    let (reducer, report) = train_reducer(&vocab.prompt_embeddings(), a.target_dim, &cfg)?;
    let mut manifest = Manifest::new(
        "reduce",
        cfg.seed,
        json!({ "reducer": cfg, "target_dim": a.target_dim, "vocab": sha256_file(&a.vocab)? }),
    );
    reducer.save(&out.join(REDUCER_OUT))?;
    manifest.add_file(&out, REDUCER_OUT)?;
    vocab.reduced(&reducer)?.save(&out.join(VOCAB_OUT))?;
    manifest.add_file(&out, VOCAB_OUT)?;

    let (mut maps_written, mut zero_pixels) = (0, 0);
    if let Some(b) = &bundle {
        let track = FramePoseTrack::load(&require_file("--bundle", &b.join(TRACK_FILE))?)?;
        std::fs::create_dir_all(out.join("maps"))?;
        for (o, c, _) in track.views(u32::MAX) {
            let rel = map_path("feat", o, c);
            let map = FeatureMap::load(&require_file("--bundle", &b.join(&rel))?)?;
            let (reduced, skipped) = reduce_feature_map(&reducer, &map)?;
            reduced.save(&out.join(&rel))?;
            manifest.add_file(&out, &rel)?;
            maps_written += 1;
            zero_pixels += skipped;
        }
        track.save(&out.join(TRACK_FILE))?;
        manifest.add_file(&out, TRACK_FILE)?;
    }

    let summary = json!({
        "source_dim": reducer.source_dim(),
        "target_dim": reducer.target_dim(),
        "prompts": vocab.len(),
        "train": report,
        "config": cfg,
        "maps_written": maps_written,
        "zero_pixels": zero_pixels,
    });
    write_json(&out, "reduce_report.json", &summary, &mut manifest)?;
    manifest.save(&out)?;
    let mut r = Report::new(summary);
    r.line(format!(
        "reduce: {} -> {} on {} prompts, mean angle {:.4} -> {:.4} rad",
        reducer.source_dim(),
        reducer.target_dim(),
        vocab.len(),
        report.initial_loss,
        report.final_loss
    ));
    r.line(format!(
        "nearest-prompt agreement {}, max |UᵀU − I| {:.4}",
        fmt_opt(report.neighbor_agreement),
        report.orthogonality_error
    ));
    if bundle.is_some() {
        r.line(format!("compressed {maps_written} maps ({zero_pixels} zero pixels left as zero)"));
    }
    Ok(r)
}

pub fn segment(a: &SegmentArgs, _g: &GlobalArgs) -> CliResult<Report> {
    let q = &a.query;
    let grid = VoxelGrid::load(&require_file("--grid", &q.grid)?)?;
    let vocab = load_vocab(&q.vocab, q.reducer.as_deref(), &grid)?;
    let out = create_out(&a.out)?;
    let labels = segment_grid(&grid, &vocab, a.tau, mode(q.raw_dot))?;
    let mut manifest = Manifest::new(
        "segment",
        0,
        json!({ "tau": a.tau, "mode": mode(q.raw_dot), "grid": sha256_file(&q.grid)?, "vocab": sha256_file(&q.vocab)? }),
    );
    labels.save(&out.join(LABELS_OUT))?;
    manifest.add_file(&out, LABELS_OUT)?;
    let mut counts = vec![0usize; vocab.len()];
    for &l in labels.labels() {
        if l != FREE_LABEL {
            counts[l as usize] += 1;
        }
    }
    let classes: Vec<_> =
        vocab.class_names().into_iter().zip(&counts).map(|(n, c)| json!({ "name": n, "voxels": c })).collect();
    let summary = json!({ "tau": a.tau, "occupied": labels.occupied_count(), "voxels": labels.labels().len(), "classes": classes });
    write_json(&out, "segment_report.json", &summary, &mut manifest)?;
    manifest.save(&out)?;
    let mut r = Report::new(summary);
    r.line(format!(
        "segment: {} of {} voxels occupied at tau {}",
        labels.occupied_count(),
        labels.labels().len(),
        a.tau
    ));
    for (n, c) in vocab.class_names().iter().zip(&counts) {
        r.line(format!("  {n:<16} {c}"));
    }
    Ok(r)
}

pub fn retrieve(a: &RetrieveArgs, _g: &GlobalArgs) -> CliResult<Report> {
    let grid = VoxelGrid::load(&require_file("--grid", &a.grid)?)?;
    let (query, label, title) = match (&a.query, &a.vocab, &a.class) {
        (Some(p), _, _) => (read_json::<Vec<f64>>("--query", p)?, json!({ "file": p }), p.display().to_string()),
        (None, Some(v), Some(name)) => {
            let vocab = load_vocab(v, a.reducer.as_deref(), &grid)?;
            let class = vocab
                .classes()
                .iter()
                .find(|c| &c.name == name)
                .ok_or_else(|| config(format!("--class: no class named {name:?}")))?;
            let prompt = class
                .prompts
                .get(a.prompt)
                .ok_or_else(|| config(format!("--prompt: class {name:?} has {} prompts", class.prompts.len())))?;
            let title = format!("{name} ({:?})", prompt.text);
            (prompt.embedding.clone(), json!({ "class": name, "prompt": prompt.text }), title)
        }
        _ => return Err(CliError::Usage("retrieve needs --query, or --vocab with --class".into())),
    };
    let opts = RetrieveOptions { mode: mode(a.raw_dot), density_filter: a.density_filter, mask_threshold: a.threshold };
    let result = retrieve_scores(&grid, &query, &opts)?;
    let out = create_out(&a.out)?;
    let geometry = grid.geometry();
    let [x, y, z] = geometry.resolution;
    let mut manifest = Manifest::new(
        "retrieve",
        0,
        json!({ "query": label, "mode": opts.mode, "density_filter": a.density_filter, "threshold": a.threshold,
                "grid": sha256_file(&a.grid)? }),
    );
    // rows run over (y, z) so the flat pixel index equals the voxel index
    FeatureMap::from_data(y * z, x, 1, result.scores.clone())?.save(&out.join("heatmap.occf"))?;
    manifest.add_file(&out, "heatmap.occf")?;
    let mask_count = match &result.mask {
        Some(mask) => {
            let data = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            FeatureMap::from_data(y * z, x, 1, data)?.save(&out.join("mask.occf"))?;
            manifest.add_file(&out, "mask.occf")?;
            Some(mask.iter().filter(|&&m| m).count())
        }
        None => None,
    };
    let mut order: Vec<usize> = (0..result.scores.len()).collect();
    order.sort_by(|&i, &j| result.scores[j].total_cmp(&result.scores[i]));
    let top: Vec<_> = order
        .iter()
        .take(a.top)
        .map(|&i| {
            json!({ "voxel": i, "coords": geometry.coords(i), "score": result.scores[i], "density": grid.densities()[i] })
        })
        .collect();
    let summary = json!({ "query": label, "voxels": result.scores.len(), "mask_count": mask_count, "top": top });
    write_json(&out, "retrieve_report.json", &summary, &mut manifest)?;
    manifest.save(&out)?;
    let mut r = Report::new(summary);
    r.line(format!("retrieve: {title} over {} voxels", result.scores.len()));
    if let Some(n) = mask_count {
        r.line(format!("{n} voxels at or above {}", a.threshold.expect("mask implies threshold")));
    }
    for &i in order.iter().take(a.top) {
        let [cx, cy, cz] = geometry.coords(i);
        r.line(format!("  ({cx:>3}, {cy:>3}, {cz:>3})  {:.4}", result.scores[i]));
    }
    Ok(r)
}

#[derive(Serialize)]
struct EvalEntry {
    tau: Option<f64>,
    #[serde(flatten)]
    scores: SegmentationReport,
}

pub fn eval(a: &EvalArgs, _g: &GlobalArgs) -> CliResult<Report> {
    let gt = SemanticGrid::load(&require_file("--gt", &a.gt)?)?;
    let mut entries = Vec::new();
    let mut retrieval = None;
    let mut inputs = json!({ "gt": sha256_file(&a.gt)? });
    if let Some(p) = &a.pred {
        let pred = SemanticGrid::load(&require_file("--pred", p)?)?;
        inputs["pred"] = sha256_file(p)?.into();
        entries.push(EvalEntry { tau: None, scores: evaluate_labels(&pred, &gt)? });
    } else if let Some(gp) = &a.grid {
        let grid = VoxelGrid::load(&require_file("--grid", gp)?)?;
        let vocab = load_vocab(a.vocab.as_deref().expect("clap requires --vocab"), a.reducer.as_deref(), &grid)?;
        inputs["grid"] = sha256_file(gp)?.into();
        let track = a.track.as_deref().map(|p| require_file("--track", p)).transpose()?;
        let taus = if a.tau.is_empty() { vec![DEFAULT_TAU] } else { a.tau.clone() };
        for tau in taus {
            let pred = segment_grid(&grid, &vocab, tau, mode(a.raw_dot))?;
            entries.push(EvalEntry { tau: Some(tau), scores: evaluate_labels(&pred, &gt)? });
        }
        if let Some(t) = track {
            let track = FramePoseTrack::load(&t)?;
            retrieval = Some(retrieval_benchmark(&grid, &vocab, &gt, &track, mode(a.raw_dot))?);
        }
    } else {
        return Err(CliError::Usage("eval needs --pred, or --grid with --vocab".into()));
    }
    let summary = json!({ "results": entries, "retrieval": retrieval });
    if let Some(o) = &a.out {
        let out = create_out(o)?;
        let mut manifest = Manifest::new("eval", 0, json!({ "tau": a.tau, "mode": mode(a.raw_dot), "inputs": inputs }));
        write_json(&out, "eval_report.json", &summary, &mut manifest)?;
        manifest.save(&out)?;
    }
    let mut r = Report::new(summary);
    for e in &entries {
        let s = &e.scores;
        let tau = e.tau.map_or(String::new(), |t| format!("tau {t:.2}  "));
        r.line(format!(
            "{tau}IoU {:.4}  mIoU {}  accuracy {}  (occupied: pred {}, gt {})",
            s.iou,
            fmt_opt(s.miou),
            fmt_opt(s.accuracy),
            s.occupied_pred,
            s.occupied_gt
        ));
        for c in &s.classes {
            r.line(format!("  {:<16} IoU {}", c.name, fmt_opt(c.iou)));
        }
    }
    if let Some(rep) = &retrieval {
        r.line(format!("retrieval mAP {}  (visible {})", fmt_opt(rep.map), fmt_opt(rep.map_visible)));
        for c in &rep.classes {
            r.line(format!("  {:<16} AP {}  visible {}", c.name, fmt_opt(c.ap), fmt_opt(c.ap_visible)));
        }
    }
    Ok(r)
}

pub fn gradcheck(a: &GradcheckArgs, _g: &GlobalArgs) -> CliResult<Report> {
    let cfg = GradcheckConfig {
        grid: a.grid,
        feature_dim: a.feature_dim,
        rays: a.rays,
        samples: a.samples,
        step: a.step,
        density_scale: a.density_scale,
        seed: a.seed,
    };
    let rep = gradcheck::run(&cfg)?;
    let pass = rep.max_rel_error < a.tolerance;
    let summary = json!({ "config": cfg, "report": rep, "tolerance": a.tolerance, "pass": pass });
    if let Some(o) = &a.out {
        let out = create_out(o)?;
        let mut manifest = Manifest::new("gradcheck", cfg.seed, json!({ "gradcheck": cfg }));
        write_json(&out, "gradcheck_report.json", &summary, &mut manifest)?;
        manifest.save(&out)?;
    }
    let mut r = Report::new(summary);
    r.line(format!(
        "gradcheck: max relative error {:.3e} at {} over {} parameters ({} with nonzero gradient)",
        rep.max_rel_error, rep.worst, rep.parameters, rep.touched
    ));
    r.line(format!("{} tolerance {:.0e}", if pass { "within" } else { "EXCEEDS" }, a.tolerance));
    if !pass {
        r.failure = Some(CliError::Core(occfield::Error::Numeric(format!(
            "gradient error {:.3e} exceeds {:.0e}",
            rep.max_rel_error, a.tolerance
        ))));
    }
    Ok(r)
}
