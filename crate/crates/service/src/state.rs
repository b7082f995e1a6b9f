use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use featsearch_core::search::topk_search_stream;
use featsearch_core::{
    topk_search, verify_store, Error as CoreError, FeatureMap, FeatureStore, QueryFilter,
    SearchHit,
};

use crate::config::{MountConfig, ServiceConfig};

#[derive(Debug, thiserror::Error)]
pub enum MountError {
    /// Missing or unreadable store; an operator mistake.
    #[error("store {name}: {source}")]
    Unavailable { name: String, source: CoreError },
    #[error("store {name} is corrupt: {detail}")]
    Corrupt { name: String, detail: String },
}

const IMAGE_EXTENSIONS: [&str; 5] = ["jpg", "jpeg", "png", "JPEG", "JPG"];

/// A store opened read-only for serving.
pub struct Mounted {
    pub name: String,
    pub store: FeatureStore,
    pub image_dir: Option<PathBuf>,
    resident: Option<Arc<Vec<FeatureMap>>>,
    positions: HashMap<String, usize>,
    pub(crate) thumbnails: Mutex<HashMap<String, Arc<Vec<u8>>>>,
}

impl Mounted {
    pub fn mount(cfg: &MountConfig) -> Result<Self, MountError> {
        let store = FeatureStore::open(&cfg.store_path).map_err(|e| {
            if e.is_corruption() {
                MountError::Corrupt {
                    name: cfg.name.clone(),
                    detail: e.to_string(),
                }
            } else {
                MountError::Unavailable {
                    name: cfg.name.clone(),
                    source: e,
                }
            }
        })?;
        let budget = cfg.ram_budget_mb.saturating_mul(1024 * 1024);
        let corrupt = |detail: String| MountError::Corrupt {
            name: cfg.name.clone(),
            detail,
        };
        let resident = if store.decoded_bytes() <= budget {
            let maps = store.load_all().map_err(|e| corrupt(e.to_string()))?;
            Some(Arc::new(maps))
        } else {
            let report = verify_store(&cfg.store_path);
            if !report.ok {
                let detail = report
                    .failed_chunks()
                    .filter_map(|c| c.error.clone())
                    .chain(report.issues.iter().cloned())
                    .collect::<Vec<_>>()
                    .join("; ");
                return Err(corrupt(detail));
            }
            None
        };
        let positions = resident
            .as_ref()
            .map(|maps| {
                maps.iter()
                    .enumerate()
                    .map(|(i, m)| (m.image_id().to_owned(), i))
                    .collect()
            })
            .unwrap_or_default();
        Ok(Self {
            name: cfg.name.clone(),
            store,
            image_dir: cfg.image_dir.clone(),
            resident,
            positions,
            thumbnails: Mutex::new(HashMap::new()),
        })
    }

    pub fn is_resident(&self) -> bool {
        self.resident.is_some()
    }

    pub fn feature_map(&self, image_id: &str) -> Result<FeatureMap, CoreError> {
        match (&self.resident, self.positions.get(image_id)) {
            (Some(maps), Some(&i)) => Ok(maps[i].clone()),
            (Some(_), None) => Err(CoreError::NotFound(format!("image {image_id}"))),
            (None, _) => self.store.get_feature_map(image_id),
        }
    }

    /// Best region per image over the whole store, held in memory or streamed.
    pub fn search(&self, qf: &QueryFilter, k: usize) -> Result<Vec<SearchHit>, CoreError> {
        match &self.resident {
            Some(maps) => topk_search(qf, maps.iter(), k),
            None => {
                let batch = self.store.manifest().images_per_chunk as usize;
                topk_search_stream(qf, self.store.iterate_batches(batch)?, k)
            }
        }
    }

    /// Original image file for an id: `<dir>/<id>` or `<dir>/<id>.<ext>`.
    pub fn image_path(&self, image_id: &str) -> Option<PathBuf> {
        let dir = self.image_dir.as_deref()?;
        if !safe_id(image_id) {
            return None;
        }
        let direct = dir.join(image_id);
        if direct.is_file() {
            return Some(direct);
        }
        IMAGE_EXTENSIONS
            .iter()
            .map(|ext| dir.join(format!("{image_id}.{ext}")))
            .find(|p| p.is_file())
    }
}

fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.contains(['/', '\\'])
        && id != "."
        && id != ".."
        && !Path::new(id).is_absolute()
}

/// Everything the handlers share. Immutable after startup.
pub struct AppState {
    pub mounts: Vec<Arc<Mounted>>,
}

impl AppState {
    pub fn mount_all(cfg: &ServiceConfig) -> Result<Self, MountError> {
        let mounts = cfg
            .stores
            .iter()
            .map(|m| Mounted::mount(m).map(Arc::new))
            .collect::<Result<_, _>>()?;
        Ok(Self { mounts })
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Mounted>> {
        self.mounts.iter().find(|m| m.name == name)
    }
}
