//! Flat-file annotation store: one `<id>.annotation.json` per image next to
//! an image directory that is only ever read. Writes go through a temporary
//! file and a rename, serialized per image id.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use vpkit_core::detect::{detect_vps_in_image, DetectedSegment, RansacConfig, VpCandidate};
use vpkit_core::geometry::segment_vp_deviation;
use vpkit_core::mask::{build_mask, MaskReport, OutlinePair};
use vpkit_core::outline::{render_condition, OutlineEdge};
use vpkit_core::{BinaryImage, HomogeneousPoint, LineSegment};

use crate::error::{AppError, AppResult, ErrorKind};
use crate::io;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_DILATION_PX: usize = 5;
pub const MAX_DILATION_PX: usize = 256;
/// Stroke width of exported condition images.
pub const CONDITION_LINE_WIDTH: usize = 3;
pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn default_dilation() -> usize {
    DEFAULT_DILATION_PX
}

/// Target VP, outline corrections and mask parameters for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub schema_version: u32,
    pub image_id: String,
    /// `[width, height]` in pixels.
    pub image_size: [usize; 2],
    pub target_vp: HomogeneousPoint,
    #[serde(default)]
    pub pairs: Vec<OutlinePair>,
    #[serde(default = "default_dilation")]
    pub dilation_px: usize,
    #[serde(default)]
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updated_at: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl AnnotationRecord {
    /// Parses a record, reporting syntax and type errors as validation
    /// failures with their position.
    pub fn parse(bytes: &[u8]) -> AppResult<Self> {
        serde_json::from_slice(bytes).map_err(|e| {
            AppError::validation(format!("invalid annotation record: {e}"))
                .with_details(json!({ "line": e.line(), "column": e.column() }))
        })
    }

    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let mut push = |field: String, message: &str| errs.push(FieldError { field, message: message.into() });
        if self.schema_version != SCHEMA_VERSION {
            push("schema_version".into(), "must be 1");
        }
        if !valid_id(&self.image_id) {
            push("image_id".into(), "must be 1-128 characters of [A-Za-z0-9._-] not starting with '.'");
        }
        let [w, h] = self.image_size;
        if w == 0 || h == 0 {
            push("image_size".into(), "width and height must be positive");
        }
        if self.pairs.is_empty() {
            push("pairs".into(), "at least one outline pair is required");
        }
        let (w, h) = (w as f64, h as f64);
        let inside = |s: &LineSegment| {
            [s.p0(), s.p1()].iter().all(|p| p.x >= -w / 2.0 && p.x <= 1.5 * w && p.y >= -h / 2.0 && p.y <= 1.5 * h)
        };
        for (i, pair) in self.pairs.iter().enumerate() {
            for (name, seg) in [("original", &pair.original), ("desired", &pair.desired)] {
                if !inside(seg) {
                    push(format!("pairs[{i}].{name}"), "endpoints must lie within twice the image extent");
                }
            }
            if OutlinePair::new(pair.original, pair.desired).is_err() {
                push(format!("pairs[{i}]"), "original and desired outlines coincide");
            }
        }
        if self.dilation_px > MAX_DILATION_PX {
            push("dilation_px".into(), "must not exceed 256");
        }
        errs
    }

    pub fn validate(&self) -> AppResult<()> {
        let errs = self.field_errors();
        if errs.is_empty() {
            return Ok(());
        }
        let msg = errs.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; ");
        Err(AppError::validation(msg).with_details(json!({ "fields": errs })))
    }

    pub fn is_complete(&self) -> bool {
        self.field_errors().is_empty()
    }

    pub fn without_timestamps(&self) -> Self {
        Self { created_at: None, updated_at: None, ..self.clone() }
    }

    /// Between-outline mask; `dilation` overrides the recorded radius.
    pub fn mask(&self, dilation: Option<usize>) -> AppResult<MaskReport> {
        let [w, h] = self.image_size;
        Ok(build_mask(&self.pairs, w, h, dilation.unwrap_or(self.dilation_px))?)
    }

    /// The desired outlines rendered as a condition image.
    pub fn condition(&self) -> AppResult<BinaryImage> {
        let edges: Vec<OutlineEdge> = self
            .pairs
            .iter()
            .map(|p| OutlineEdge {
                seg: p.desired,
                vp_index: 0,
                deviation: segment_vp_deviation(&p.desired, &self.target_vp).unwrap_or(0.0),
            })
            .collect();
        let [w, h] = self.image_size;
        Ok(render_condition(&edges, w, h, CONDITION_LINE_WIDTH)?)
    }
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub image_id: String,
    pub file: String,
    /// `[width, height]`.
    pub size: [usize; 2],
    pub annotated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatesPayload {
    pub image_id: String,
    pub config: RansacConfig,
    pub segments: Vec<DetectedSegment>,
    pub candidates: Vec<VpCandidate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub file: String,
    pub annotation_file: String,
    pub mask_file: String,
    pub cond_file: String,
    /// Reserved; depth maps are not produced.
    pub depth_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub images: Vec<ManifestEntry>,
    /// Latest `updated_at` among the exported records.
    pub created_at: String,
}

/// Test hook that simulates a crash inside a record write.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Truncate the temporary file to half its length and abort the process
    /// before the rename.
    AbortMidWrite,
}

pub struct Store {
    images_dir: PathBuf,
    root: PathBuf,
    ransac: RansacConfig,
    ransac_key: String,
    fault: Option<Fault>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    candidates: RwLock<HashMap<String, Arc<CandidatesPayload>>>,
}

impl Store {
    /// Opens a store over `images_dir`, creating `root` if needed and
    /// removing temporary files left behind by interrupted writes.
    pub fn open(images_dir: &Path, root: &Path, ransac: RansacConfig) -> AppResult<Self> {
        ransac.validate()?;
        if !images_dir.is_dir() {
            return Err(AppError::new(ErrorKind::StoreUnavailable, format!("{}: not a directory", images_dir.display())));
        }
        fs::create_dir_all(root)
            .map_err(|e| AppError::new(ErrorKind::StoreUnavailable, format!("{}: {e}", root.display())))?;
        for entry in fs::read_dir(root)?.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with(io::TEMP_PREFIX) && name.ends_with(".tmp") {
                let _ = fs::remove_file(entry.path());
            }
        }
        let ransac_key = serde_json::to_string(&ransac).map_err(|e| AppError::internal(e.to_string()))?;
        Ok(Self {
            images_dir: images_dir.to_path_buf(),
            root: root.to_path_buf(),
            ransac,
            ransac_key,
            fault: None,
            locks: Mutex::default(),
            candidates: RwLock::default(),
        })
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn image_files(&self) -> AppResult<Vec<(String, PathBuf)>> {
        let rd = fs::read_dir(&self.images_dir)
            .map_err(|e| AppError::new(ErrorKind::StoreUnavailable, format!("{}: {e}", self.images_dir.display())))?;
        let mut files: Vec<(String, PathBuf)> = rd
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .filter_map(|p| {
                let stem = p.file_stem()?.to_str()?.to_string();
                valid_id(&stem).then_some((stem, p))
            })
            .collect();
        files.sort();
        files.dedup_by(|a, b| a.0 == b.0);
        Ok(files)
    }

    pub fn image_path(&self, id: &str) -> AppResult<PathBuf> {
        if !valid_id(id) {
            return Err(AppError::not_found(format!("no image {id:?}")));
        }
        self.image_files()?
            .into_iter()
            .find(|(stem, _)| stem == id)
            .map(|(_, p)| p)
            .ok_or_else(|| AppError::not_found(format!("no image {id:?}")))
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.annotation.json"))
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap_or_else(|p| p.into_inner()).entry(id.to_string()).or_default().clone()
    }

    fn load_record(&self, id: &str) -> AppResult<Option<AnnotationRecord>> {
        match fs::read(self.record_path(id)) {
            Ok(bytes) => AnnotationRecord::parse(&bytes)
                .map(Some)
                .map_err(|e| AppError::internal(format!("stored record for {id} is unreadable: {}", e.message))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn list_images(&self) -> AppResult<Vec<ImageInfo>> {
        self.image_files()?
            .into_iter()
            .map(|(id, path)| {
                let (w, h) = image::image_dimensions(&path).map_err(|e| AppError::from(e).context(path.display()))?;
                let annotated = self.load_record(&id).ok().flatten().is_some_and(|r| r.is_complete());
                Ok(ImageInfo {
                    file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                    image_id: id,
                    size: [w as usize, h as usize],
                    annotated,
                })
            })
            .collect()
    }

    pub fn image_bytes(&self, id: &str) -> AppResult<(Vec<u8>, &'static str)> {
        let path = self.image_path(id)?;
        let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => "image/png",
            _ => "image/jpeg",
        };
        Ok((io::read_bytes(&path)?, mime))
    }

    /// Detected VP candidates, computed once per image and configuration.
    pub fn vp_candidates(&self, id: &str) -> AppResult<Arc<CandidatesPayload>> {
        let path = self.image_path(id)?;
        let key = format!("{id}\n{}", self.ransac_key);
        if let Some(hit) = self.candidates.read().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        let gray = io::read_gray(&path)?;
        let (segments, candidates) = detect_vps_in_image(&gray, &self.ransac)?;
        let payload = Arc::new(CandidatesPayload { image_id: id.into(), config: self.ransac, segments, candidates });
        self.candidates.write().unwrap_or_else(|p| p.into_inner()).insert(key, payload.clone());
        Ok(payload)
    }

    pub fn get_annotation(&self, id: &str) -> AppResult<AnnotationRecord> {
        self.image_path(id)?;
        self.load_record(id)?.ok_or_else(|| AppError::not_found(format!("image {id:?} has no annotation")))
    }

    fn complete_annotation(&self, id: &str) -> AppResult<AnnotationRecord> {
        self.image_path(id)?;
        match self.load_record(id)? {
            Some(r) if r.is_complete() => Ok(r),
            _ => Err(AppError::new(ErrorKind::IncompleteAnnotation, format!("image {id:?} is not completely annotated"))
                .with_details(json!({ "image_ids": [id] }))),
        }
    }

    /// Replaces the record of `id`. `if_match`, when given, must equal the
    /// stored `updated_at` (`*` accepts any existing record).
    pub fn put_annotation(&self, id: &str, mut record: AnnotationRecord, if_match: Option<&str>) -> AppResult<AnnotationRecord> {
        let path = self.image_path(id)?;
        if record.image_id != id {
            return Err(AppError::validation(format!("image_id {:?} does not match {id:?}", record.image_id))
                .with_details(json!({ "fields": [{ "field": "image_id", "message": "must match the URL" }] })));
        }
        record.validate()?;
        let (w, h) = image::image_dimensions(&path)?;
        if record.image_size != [w as usize, h as usize] {
            return Err(AppError::validation(format!("image_size must be [{w}, {h}]"))
                .with_details(json!({ "fields": [{ "field": "image_size", "message": "does not match the image" }] })));
        }

        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let existing = self.load_record(id)?;
        let current = existing.as_ref().and_then(|r| r.updated_at.clone());
        if let Some(tag) = if_match.map(|t| t.trim().trim_matches('"')) {
            let ok = match (&existing, tag) {
                (Some(_), "*") => true,
                _ => current.as_deref() == Some(tag),
            };
            if !ok {
                return Err(AppError::new(ErrorKind::Conflict, "annotation was modified since it was read")
                    .with_details(json!({ "current_updated_at": current })));
            }
        }
        let now = next_timestamp(current.as_deref());
        record.created_at = existing.and_then(|r| r.created_at).or_else(|| Some(now.clone()));
        record.updated_at = Some(now);
        let bytes = io::json_bytes(&record)?;
        let fault = self.fault;
        io::atomic_write_with(&self.record_path(id), &bytes, |f| {
            if fault == Some(Fault::AbortMidWrite) {
                f.set_len(bytes.len() as u64 / 2)?;
                f.sync_all()?;
                std::process::abort();
            }
            Ok(())
        })?;
        Ok(record)
    }

    pub fn mask_png(&self, id: &str) -> AppResult<Vec<u8>> {
        io::binary_png_bytes(&self.complete_annotation(id)?.mask(None)?.mask)
    }

    pub fn condition_png(&self, id: &str) -> AppResult<Vec<u8>> {
        io::binary_png_bytes(&self.complete_annotation(id)?.condition()?)
    }

    /// Writes images, records, masks, condition images and a manifest to
    /// `<root>/exports/<name>/`. Output bytes depend only on the inputs.
    pub fn export_dataset(&self, name: &str, image_ids: &[String]) -> AppResult<(DatasetManifest, PathBuf)> {
        if !valid_id(name) {
            return Err(AppError::validation("export name must be 1-128 characters of [A-Za-z0-9._-]"));
        }
        if image_ids.is_empty() {
            return Err(AppError::validation("image_ids must not be empty"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = image_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(AppError::validation(format!("duplicate image id {dup:?}")));
        }
        let mut records = Vec::new();
        let mut incomplete = Vec::new();
        for id in image_ids {
            let path = self.image_path(id)?;
            match self.complete_annotation(id) {
                Ok(r) => records.push((id, path, r)),
                Err(e) if e.kind == ErrorKind::IncompleteAnnotation => incomplete.push(id.clone()),
                Err(e) => return Err(e),
            }
        }
        if !incomplete.is_empty() {
            return Err(AppError::new(
                ErrorKind::IncompleteAnnotation,
                format!("not completely annotated: {}", incomplete.join(", ")),
            )
            .with_details(json!({ "image_ids": incomplete })));
        }

        let dir = self.root.join("exports").join(name);
        let mut entries = Vec::new();
        for (id, path, record) in &records {
            let file_name = path.file_name().unwrap_or_default().to_string_lossy();
            let entry = ManifestEntry {
                image_id: id.to_string(),
                file: format!("images/{file_name}"),
                annotation_file: format!("annotations/{id}.annotation.json"),
                mask_file: format!("masks/{id}.mask.png"),
                cond_file: format!("cond/{id}.cond.png"),
                depth_file: None,
            };
            io::atomic_write(&dir.join(&entry.file), &io::read_bytes(path)?)?;
            io::atomic_write(&dir.join(&entry.annotation_file), &io::json_bytes(record)?)?;
            io::atomic_write(&dir.join(&entry.mask_file), &io::binary_png_bytes(&record.mask(None)?.mask)?)?;
            io::atomic_write(&dir.join(&entry.cond_file), &io::binary_png_bytes(&record.condition()?)?)?;
            entries.push(entry);
        }
        let created_at = records.iter().filter_map(|(_, _, r)| r.updated_at.clone()).max().unwrap_or_default();
        let manifest = DatasetManifest { name: name.into(), images: entries, created_at };
        io::atomic_write(&dir.join("manifest.json"), &io::json_bytes(&manifest)?)?;
        Ok((manifest, dir))
    }
}

/// Current UTC time, forced strictly after `previous`.
fn next_timestamp(previous: Option<&str>) -> String {
    let mut now = Utc::now();
    if let Some(prev) = previous.and_then(|p| DateTime::parse_from_rfc3339(p).ok()) {
        let floor = prev.with_timezone(&Utc) + chrono::Duration::microseconds(1);
        if now < floor {
            now = floor;
        }
    }
    now.to_rfc3339_opts(SecondsFormat::Micros, true)
}
