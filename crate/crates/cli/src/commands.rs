use std::fs;
use std::path::{Path, PathBuf};

use weatherflow::backbone::Task;
use weatherflow::config::RunConfig;
use weatherflow::evalkit::{sky_mask, MetricReport};
use weatherflow::flow::{self, TrainSet, FINAL_CHECKPOINT};
use weatherflow::model::{Checkpoint, Model};
use weatherflow::pipelines::{self, FrRequest, IrRequest};
use weatherflow::scenegen::{IntrinsicMap, WeatherClass};
use weatherflow::tensor::Tensor;
use weatherflow::{dataset, preview, wdt, Error, Result};

use crate::{EvalArgs, GenDataArgs, HeatmapArgs, InferArgs, TrainArgs};

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn missing(path: &Path, what: &str) -> Error {
    Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, what.to_string()))
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let samples = dataset::generate(a.count, seed, cfg.image_size)?;
    dataset::write_dataset(&samples, &a.out)?;
    if a.previews {
        dataset::write_previews(&samples, &a.out)?;
    }
    println!("{}", dataset::manifest_path(&a.out).display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let data_dir = a
        .data
        .or(cfg.dataset.clone())
        .ok_or_else(|| Error::Config("no dataset: pass --data or set `dataset` in the config".into()))?;
    let out = a
        .out
        .or(cfg.checkpoint.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `checkpoint` in the config".into()))?;
    let task: Task = a.task.into();
    let mcfg = cfg.model_config(task)?;
    let samples = dataset::read_dataset(&data_dir)?;
    let data = TrainSet::new(&samples, &mcfg)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let every = a.log_every;
    flow::train(&mcfg, &cfg.train_config(), &data, Some(&out), resume, |r| {
        if every > 0 && (r.step + 1) % every == 0 {
            eprintln!("step {} loss {:.5}", r.step + 1, r.loss);
        }
    })?;
    println!("{}", out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

fn load_model(path: &Path, task: Task) -> Result<Model> {
    let model = Checkpoint::load(path)?.model;
    if model.config.task != task {
        return Err(Error::CheckpointMismatch(format!(
            "{} holds a {} model, --task is {}",
            path.display(),
            model.config.task.name(),
            task.name()
        )));
    }
    Ok(model)
}

fn read_image(input: &Path) -> Result<Tensor> {
    let path = if input.is_dir() { input.join("image.wdt") } else { input.to_path_buf() };
    wdt::read(&path)
}

fn check_size(model: &Model, t: &Tensor, what: &str) -> Result<()> {
    let n = model.config.image_size;
    let s = t.shape();
    if s.len() != 3 || s[0] != n || s[1] != n {
        return Err(Error::CheckpointMismatch(format!("{what} is {s:?}, checkpoint expects {n}x{n}")));
    }
    Ok(())
}

fn parse_maps(list: &str) -> Result<Vec<IntrinsicMap>> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: IntrinsicMap = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("map list is empty".into()));
    }
    Ok(out)
}

fn write_output(dir: &Path, name: &str, t: &Tensor, display: &Tensor) -> Result<()> {
    wdt::write(&dir.join(format!("{name}.wdt")), t)?;
    preview::write_png(&dir.join(format!("{name}.png")), display)
}

pub fn infer(a: InferArgs) -> Result<()> {
    let weather: WeatherClass = a.weather.parse()?;
    let task: Task = a.task.into();
    let model = load_model(&a.ckpt, task)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    match task {
        Task::Ir => {
            let targets = match &a.targets {
                Some(t) => parse_maps(t)?,
                None => IntrinsicMap::ALL.to_vec(),
            };
            let image = read_image(&a.input)?;
            check_size(&model, &image, "input image")?;
            let req = IrRequest {
                image,
                weather,
                targets,
                steps: a.steps,
                seed: a.seed,
            };
            for (m, t) in pipelines::decompose(&req, &model)? {
                write_output(&a.out, m.name(), &t, &preview::displayable(m, &t))?;
            }
        }
        Task::Fr => {
            let wanted = match &a.maps {
                Some(m) => parse_maps(m)?,
                None => IntrinsicMap::ALL
                    .into_iter()
                    .filter(|m| a.input.join(format!("{m}.wdt")).exists())
                    .collect(),
            };
            if wanted.is_empty() {
                return Err(missing(&a.input, "no <map>.wdt files in the input directory"));
            }
            let mut maps = std::collections::BTreeMap::new();
            for m in wanted {
                let t = wdt::read(&a.input.join(format!("{m}.wdt")))?;
                check_size(&model, &t, m.name())?;
                maps.insert(m, t);
            }
            let req = FrRequest {
                maps,
                weather,
                steps: a.steps,
                seed: a.seed,
            };
            let img = pipelines::render(&req, &model)?;
            write_output(&a.out, "image", &img, &img)?;
        }
    }
    println!("{}", a.out.display());
    Ok(())
}

const EVAL_NAMES: [&str; 6] = ["image", "albedo", "normal", "roughness", "metallic", "irradiance"];

/// `(pred, gt)` directory pairs: matching `scene_*` subdirectories when the
/// prediction directory has any, otherwise the two directories themselves.
fn eval_dirs(pred: &Path, gt: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let entries = fs::read_dir(pred).map_err(|e| Error::io(pred, e))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Ok(vec![(pred.to_path_buf(), gt.to_path_buf())]);
    }
    let mut out = Vec::new();
    for p in subdirs {
        let name = p.file_name().expect("directory entry has a name");
        let g = gt.join(name);
        if g.is_dir() {
            out.push((p, g));
        } else {
            eprintln!("warning: no ground truth for {}, skipped", p.display());
        }
    }
    Ok(out)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    if !a.gt_dir.is_dir() {
        return Err(missing(&a.gt_dir, "ground-truth directory not found"));
    }
    let mut report = MetricReport::default();
    for (pd, gd) in eval_dirs(&a.pred_dir, &a.gt_dir)? {
        let sem = gd.join("semantics.wdt");
        let mask = if sem.exists() { Some(sky_mask(&wdt::read(&sem)?)) } else { None };
        for name in EVAL_NAMES {
            let p = pd.join(format!("{name}.wdt"));
            if !p.exists() {
                continue;
            }
            let g = gd.join(format!("{name}.wdt"));
            if !g.exists() {
                eprintln!("warning: {} has no ground truth, skipped", p.display());
                continue;
            }
            report.add(name, &wdt::read(&p)?, &wdt::read(&g)?, mask.as_ref())?;
        }
    }
    if report.maps.is_empty() {
        return Err(missing(&a.pred_dir, "no prediction/ground-truth pairs found"));
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&a.out, report.to_csv()).map_err(|e| Error::io(&a.out, e))?;
    println!("{}", a.out.display());
    Ok(())
}

/// Nearest-neighbour upsampling of a `[rows, cols, 1]` grid to `size`
/// pixels, scaled so its largest cell is 1.
fn heatmap_preview(grid: &Tensor, size: usize) -> Result<Tensor> {
    let (r, c) = (grid.shape()[0], grid.shape()[1]);
    let peak = grid.data().iter().cloned().fold(0.0f32, f32::max);
    let k = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let data = (0..size * size)
        .map(|i| grid.data()[(i / size) * r / size * c + (i % size) * c / size] * k)
        .collect();
    Tensor::new(vec![size, size, 1], data)
}

pub fn heatmap(a: HeatmapArgs) -> Result<()> {
    let map: IntrinsicMap = a.map.parse()?;
    let model = load_model(&a.ckpt, Task::Ir)?;
    let image = read_image(&a.input)?;
    check_size(&model, &image, "input image")?;
    let n = model.config.image_size;
    let batch = image.reshape(&[1, n, n, 3])?;
    let (maps, _) = model.heatmaps(&batch, map)?;
    let grid = &maps[0];
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let name = format!("heatmap_{map}");
    write_output(&a.out, &name, grid, &heatmap_preview(grid, n)?)?;
    println!("{}", a.out.join(format!("{name}.wdt")).display());
    Ok(())
}
