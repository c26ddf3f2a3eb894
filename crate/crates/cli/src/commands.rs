use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use defectnet::cam::{bounding_region, model_cam, overlay, upsample};
use defectnet::data::{load_dataset, read_ppm, slice_image, split, write_ppm, LabeledDataset, RasterImage};
use defectnet::metrics::{report, ConfusionMatrix};
use defectnet::model::argmax;
use defectnet::train::{evaluate, train_with};
use defectnet::weights_io::{load_into, read_weights, write_weights, LoadPolicy, FORMAT_VERSION, MAGIC};
use defectnet::{ArchSpec, Error, Model, TrainRule, LABELS};
use walkdir::WalkDir;

use crate::config::RunConfig;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_IMAGE: u8 = 4;
pub const EXIT_CAPABILITY: u8 = 5;

/// Short names used in `p_<name>=` probability columns.
pub const SHORT_LABELS: [&str; 4] = ["det", "mould", "normal", "stain"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T = ()> = Result<T, CliError>;

trait Code<T> {
    fn code(self, code: u8) -> CliResult<T>;
}

impl<T, E: fmt::Display> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> CliResult<T> {
        self.map_err(|e| CliError::new(code, e.to_string()))
    }
}

fn io_line(w: &mut dyn Write, line: fmt::Arguments<'_>) -> CliResult {
    w.write_fmt(line).and_then(|_| w.write_all(b"\n")).code(EXIT_DATA)
}

macro_rules! say {
    ($w:expr, $($arg:tt)*) => { io_line($w, format_args!($($arg)*))? };
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))
}

/// Writes `<out>/<label dirs>/<stem>_<index>.ppm` tiles for every PPM under
/// `src` and returns per-class tile counts.
pub fn cmd_prepare(src: &Path, out_dir: &Path, tile: usize, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<Vec<(String, usize)>> {
    if tile == 0 {
        return Err(CliError::new(EXIT_CONFIG, "tile size must be positive"));
    }
    if !src.is_dir() {
        return Err(CliError::new(EXIT_CONFIG, format!("{}: not a readable directory", src.display())));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(src).sort_by_file_name() {
        let entry = entry.code(EXIT_CONFIG)?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "ppm") {
            files.push(entry.into_path());
        }
    }
    let mut counts: Vec<(String, usize)> = LABELS.iter().map(|l| (l.to_string(), 0)).collect();
    for path in files {
        let rel = path.strip_prefix(src).expect("walk stays under src");
        let class = match rel.components().next() {
            Some(c) if rel.components().count() > 1 => c.as_os_str().to_string_lossy().into_owned(),
            _ => {
                say!(err, "warning: {} is not inside a class directory, skipped", path.display());
                continue;
            }
        };
        let img = read_ppm(&path).code(EXIT_CONFIG)?;
        let dest = out_dir.join(rel.parent().expect("has a class directory"));
        fs::create_dir_all(&dest).code(EXIT_DATA)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let tiles = slice_image(&img, tile);
        for (i, t) in tiles.iter().enumerate() {
            write_ppm(&dest.join(format!("{stem}_{i:03}.ppm")), t).code(EXIT_DATA)?;
        }
        match counts.iter_mut().find(|(c, _)| *c == class) {
            Some(slot) => slot.1 += tiles.len(),
            None => counts.push((class, tiles.len())),
        }
    }
    for (class, n) in &counts {
        say!(out, "{class}: {n} tiles");
        if *n == 0 {
            say!(err, "warning: class {class} has no tiles");
        }
    }
    Ok(counts)
}

fn load_tree(dir: &Path, err: &mut dyn Write) -> CliResult<LabeledDataset> {
    let loaded = load_dataset(dir).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", dir.display())))?;
    for w in &loaded.warnings {
        say!(err, "warning: {}: {w}", dir.display());
    }
    Ok(loaded.dataset)
}

fn check_sizes(ds: &LabeledDataset, side: usize, code: u8) -> CliResult {
    match ds.items.iter().find(|it| it.image.width != side || it.image.height != side) {
        Some(it) => Err(CliError::new(
            code,
            format!(
                "expected {side}×{side} images, {} is {}×{}",
                it.path.as_deref().unwrap_or(Path::new("?")).display(),
                it.image.width,
                it.image.height
            ),
        )),
        None => Ok(()),
    }
}

/// Trains per `cfg` and writes `model.dnw`, `history.csv` and `run.meta`
/// into the output directory, which is returned.
pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<PathBuf> {
    let spec = cfg.arch_spec().code(EXIT_CONFIG)?;
    let all = load_tree(&cfg.train_dir, err)?;
    let (train_ds, val_ds) = match &cfg.val_dir {
        Some(dir) => (all, load_tree(dir, err)?),
        None => split(&all, cfg.val_fraction, cfg.train.seed).code(EXIT_CONFIG)?,
    };
    if val_ds.is_empty() {
        return Err(CliError::new(EXIT_DATA, "validation set is empty"));
    }
    check_sizes(&train_ds, spec.input_size, EXIT_DATA)?;
    check_sizes(&val_ds, spec.input_size, EXIT_DATA)?;

    let mut model = Model::build(&spec, cfg.train.seed).code(EXIT_CONFIG)?;
    if let Some(path) = &cfg.pretrained {
        let params = read_archive(path)?;
        let copied = load_into(&mut model, &params, LoadPolicy::SkipMissing).code(EXIT_DATA)?;
        say!(out, "pretrained: {} tensors from {}", copied.len(), path.display());
    }
    model.set_trainable(TrainRule::FreezeUpToBlock(cfg.freeze_blocks)).code(EXIT_CONFIG)?;
    say!(out, "model: {spec}, {} trainable tensors", model.trainable_names().len());
    say!(out, "data: {} train, {} validation", train_ds.len(), val_ds.len());

    let mut progress = Vec::new();
    let history = train_with(&mut model, &train_ds, &val_ds, &cfg.augment, &cfg.train, |r| {
        progress.push(format!(
            "epoch {}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        ));
    })
    .code(EXIT_DATA)?;
    for line in progress {
        say!(out, "{line}");
    }

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).code(EXIT_DATA)?;
    let mut archive = Vec::new();
    write_weights(&model, &mut archive).code(EXIT_DATA)?;
    write_file(&dir.join("model.dnw"), &archive)?;
    write_file(&dir.join("history.csv"), history.to_csv().as_bytes())?;
    let meta = format!(
        "format = {} v{FORMAT_VERSION}\n{}resolved_arch = {spec}\nlabels = {}\ntrain_items = {}\nval_items = {}\ntrainable = {}\n",
        String::from_utf8_lossy(MAGIC),
        cfg.render(),
        LABELS.join(","),
        train_ds.len(),
        val_ds.len(),
        model.trainable_names().join(",")
    );
    write_file(&dir.join("run.meta"), meta.as_bytes())?;
    say!(out, "wrote {}", dir.display());
    Ok(dir.clone())
}

fn read_archive(path: &Path) -> CliResult<defectnet::ParamMap> {
    let file = fs::File::open(path).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))?;
    read_weights(&mut BufReader::new(file)).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))
}

/// Rebuilds a model from a DNW1 archive. `input_size` is only consulted for
/// GAP heads, whose parameters do not fix it.
pub fn load_model(path: &Path, input_size: usize) -> CliResult<Model> {
    let params = read_archive(path)?;
    let spec = ArchSpec::infer(&params, input_size).code(EXIT_DATA)?;
    let mut model = Model::build(&spec, 0).code(EXIT_DATA)?;
    load_into(&mut model, &params, LoadPolicy::Strict).code(EXIT_DATA)?;
    Ok(model)
}

fn require_defect_classes(model: &Model) -> CliResult {
    let classes = model.spec().num_classes;
    if classes != LABELS.len() {
        return Err(CliError::new(
            EXIT_DATA,
            format!("model has {classes} classes, expected {}", LABELS.len()),
        ));
    }
    Ok(())
}

fn write_confusion(path: Option<&Path>, cm: &ConfusionMatrix) -> CliResult {
    match path {
        Some(p) => write_file(p, cm.to_csv().as_bytes()),
        None => Ok(()),
    }
}

pub fn cmd_eval(
    model_path: &Path,
    test_dir: &Path,
    input_size: usize,
    confusion_out: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<ConfusionMatrix> {
    let model = load_model(model_path, input_size)?;
    require_defect_classes(&model)?;
    let ds = load_tree(test_dir, err)?;
    check_sizes(&ds, model.spec().input_size, EXIT_IMAGE)?;
    let cm = evaluate(&model, &ds).code(EXIT_DATA)?;
    say!(out, "{}", report(&cm).code(EXIT_DATA)?.render().trim_end());
    write_confusion(confusion_out, &cm)?;
    Ok(cm)
}

/// Report for confusion counts read from CSV instead of a model run.
pub fn cmd_eval_counts(counts: &Path, confusion_out: Option<&Path>, out: &mut dyn Write) -> CliResult<ConfusionMatrix> {
    let text = fs::read_to_string(counts).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", counts.display())))?;
    let cm = ConfusionMatrix::from_csv(&text).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", counts.display())))?;
    say!(out, "{}", report(&cm).code(EXIT_DATA)?.render().trim_end());
    write_confusion(confusion_out, &cm)?;
    Ok(cm)
}

fn read_input_image(path: &Path, side: usize) -> CliResult<RasterImage> {
    let img = read_ppm(path).code(EXIT_IMAGE)?;
    if img.width != side || img.height != side {
        return Err(CliError::new(
            EXIT_IMAGE,
            format!(
                "{}: expected {side}×{side} image, got {}×{}",
                path.display(),
                img.width,
                img.height
            ),
        ));
    }
    Ok(img)
}

pub fn cmd_predict(model_path: &Path, image: &Path, input_size: usize, out: &mut dyn Write) -> CliResult<(usize, Vec<f32>)> {
    let model = load_model(model_path, input_size)?;
    require_defect_classes(&model)?;
    let img = read_input_image(image, model.spec().input_size)?;
    let (label, probs) = model.predict(&img.to_tensor()).code(EXIT_DATA)?;
    let cols: Vec<String> = SHORT_LABELS
        .iter()
        .zip(&probs)
        .map(|(n, p)| format!("p_{n}={p:.4}"))
        .collect();
    say!(out, "{} {}", LABELS[label], cols.join(" "));
    Ok((label, probs))
}

/// Which class a CAM is drawn for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CamClass {
    Auto,
    Named(String),
}

impl std::str::FromStr for CamClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(CamClass::Auto),
            name if LABELS.contains(&name) => Ok(CamClass::Named(name.to_string())),
            other => Err(format!("unknown class {other:?}; expected auto or one of {LABELS:?}")),
        }
    }
}

pub struct CamOptions {
    pub class: CamClass,
    pub alpha: f32,
    pub threshold: f32,
    pub input_size: usize,
}

pub fn cmd_cam(
    model_path: &Path,
    image: &Path,
    out_path: &Path,
    opts: &CamOptions,
    out: &mut dyn Write,
) -> CliResult<Option<defectnet::cam::BoundingRegion>> {
    if !(0.0..=1.0).contains(&opts.alpha) || !(0.0..=1.0).contains(&opts.threshold) {
        return Err(CliError::new(EXIT_CONFIG, "alpha and threshold must lie in [0, 1]"));
    }
    let model = load_model(model_path, opts.input_size)?;
    require_defect_classes(&model)?;
    if let Err(e) = model.cam_weights() {
        return Err(CliError::new(EXIT_CAPABILITY, e.to_string()));
    }
    let img = read_input_image(image, model.spec().input_size)?;
    let tensor = img.to_tensor();
    let batch = tensor.clone().reshape([1, 3, img.height, img.width]).code(EXIT_DATA)?;
    let trace = model.forward(&batch).code(EXIT_DATA)?;
    let class = match &opts.class {
        CamClass::Auto => argmax(trace.probs.data()),
        CamClass::Named(n) => LABELS.iter().position(|l| l == n).expect("validated on parse"),
    };
    let heat = model_cam(&model, &trace, class).map_err(|e| match e {
        Error::Capability(m) => CliError::new(EXIT_CAPABILITY, m),
        other => CliError::new(EXIT_DATA, other.to_string()),
    })?;
    let full = upsample(&heat, (img.height, img.width)).code(EXIT_DATA)?;
    let blended = overlay(&full, &tensor, opts.alpha).code(EXIT_DATA)?;
    let rendered = RasterImage::from_tensor(&blended).code(EXIT_DATA)?;
    let file = fs::File::create(out_path).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", out_path.display())))?;
    let mut sink = BufWriter::new(file);
    sink.write_all(&defectnet::data::encode_ppm(&rendered))
        .and_then(|_| sink.flush())
        .code(EXIT_DATA)?;
    let region = bounding_region(&heat, opts.threshold);
    match region {
        Some(r) => say!(out, "class={} region x={} y={} w={} h={}", LABELS[class], r.x0, r.y0, r.width, r.height),
        None => say!(out, "class={} region none", LABELS[class]),
    }
    Ok(region)
}
