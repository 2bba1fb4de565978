//! Delegation queue, persona and personal dataset, with their on-disk form.
//!
//! Layout of the state directory:
//! `persona.json`, `queue.json`, `personal.jsonl` (write-ahead label log)
//! and `model.evdl` (the active checkpoint).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use evdl_core::data::{append_example, load_dataset, Annotation, Dataset, LabeledExample};
use evdl_core::decision::PersonaConfig;
use evdl_core::{Error, Label, Result};
use serde::{Deserialize, Serialize};

pub const USER_ANNOTATOR: &str = "user";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelegationStatus {
    Pending,
    Labeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationItem {
    pub item_id: String,
    pub features: Vec<f64>,
    pub p_bar: f64,
    pub uncertainty_u: f64,
    /// θ in force when the item was enqueued; `uncertainty_u` exceeds it.
    pub theta_at_enqueue: f64,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub status: DelegationStatus,
    pub user_label: Option<Label>,
}

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct StateDir {
    root: PathBuf,
}

impl StateDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::Io {
            path: root.clone(),
            source: e,
        })?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn persona(&self) -> PathBuf {
        self.root.join("persona.json")
    }

    pub fn queue(&self) -> PathBuf {
        self.root.join("queue.json")
    }

    pub fn personal(&self) -> PathBuf {
        self.root.join("personal.jsonl")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.evdl")
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    match std::fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path, e)),
    }
}

/// Mutable session state. All mutation goes through one lock in the service.
#[derive(Debug)]
pub struct Session {
    dir: StateDir,
    pub persona: PersonaConfig,
    queue: Vec<DelegationItem>,
    index: HashMap<String, usize>,
    personal: Dataset,
}

/// Why a label could not be recorded.
#[derive(Debug)]
pub enum LabelRejection {
    Unknown,
    AlreadyLabeled,
    Storage(Error),
}

impl Session {
    /// Restores state from `dir`, or starts empty. `schema` and `dim` are
    /// those of the active model and apply to the personal dataset.
    pub fn restore(dir: StateDir, default_persona: PersonaConfig, schema: &str, dim: usize) -> Result<Self> {
        let persona = read_json(&dir.persona())?.unwrap_or(default_persona);
        persona.validate()?;
        let mut queue: Vec<DelegationItem> = read_json(&dir.queue())?.unwrap_or_default();
        let personal = if dir.personal().exists() {
            let loaded = load_dataset(dir.personal())?;
            Dataset::new(schema, dim, loaded.examples().to_vec())?
        } else {
            Dataset::empty(schema, dim)
        };
        // a label reaches the log before the queue file; finish any interrupted update
        for item in &mut queue {
            if let Some(ex) = personal.get(&item.item_id) {
                item.status = DelegationStatus::Labeled;
                item.user_label = Some(ex.label());
            }
        }
        let index = queue.iter().enumerate().map(|(i, it)| (it.item_id.clone(), i)).collect();
        let session = Self {
            dir,
            persona,
            queue,
            index,
            personal,
        };
        session.save_queue()?;
        Ok(session)
    }

    fn save_queue(&self) -> Result<()> {
        write_json_atomic(&self.dir.queue(), &self.queue)
    }

    pub fn set_persona(&mut self, persona: PersonaConfig) -> Result<()> {
        persona.validate()?;
        write_json_atomic(&self.dir.persona(), &persona)?;
        self.persona = persona;
        Ok(())
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.index.contains_key(item_id)
    }

    pub fn item(&self, item_id: &str) -> Option<&DelegationItem> {
        self.index.get(item_id).map(|&i| &self.queue[i])
    }

    /// Adds a pending item unless one with the same id was ever enqueued.
    /// Returns whether the queue changed.
    pub fn enqueue(&mut self, item: DelegationItem) -> Result<bool> {
        if self.contains(&item.item_id) {
            return Ok(false);
        }
        self.index.insert(item.item_id.clone(), self.queue.len());
        self.queue.push(item);
        if let Err(e) = self.save_queue() {
            let item = self.queue.pop().expect("just pushed");
            self.index.remove(&item.item_id);
            return Err(e);
        }
        Ok(true)
    }

    /// Pending items, most uncertain first, ties by id.
    pub fn pending(&self) -> Vec<&DelegationItem> {
        let mut items: Vec<&DelegationItem> =
            self.queue.iter().filter(|it| it.status == DelegationStatus::Pending).collect();
        items.sort_by(|a, b| {
            b.uncertainty_u
                .total_cmp(&a.uncertainty_u)
                .then_with(|| a.item_id.cmp(&b.item_id))
        });
        items
    }

    pub fn pending_count(&self) -> usize {
        self.queue.iter().filter(|it| it.status == DelegationStatus::Pending).count()
    }

    /// Records the user's label: appended durably to the personal log, then
    /// reflected in the queue.
    pub fn submit_label(&mut self, item_id: &str, label: Label) -> std::result::Result<&DelegationItem, LabelRejection> {
        let &i = self.index.get(item_id).ok_or(LabelRejection::Unknown)?;
        if self.queue[i].status == DelegationStatus::Labeled {
            return Err(LabelRejection::AlreadyLabeled);
        }
        let annotation = Annotation {
            annotator_id: USER_ANNOTATOR.into(),
            label,
        };
        let ex = LabeledExample::annotated(item_id, self.queue[i].features.clone(), vec![annotation])
            .map_err(LabelRejection::Storage)?;
        append_example(self.dir.personal(), &ex).map_err(LabelRejection::Storage)?;
        self.personal.push(ex).map_err(LabelRejection::Storage)?;
        self.queue[i].status = DelegationStatus::Labeled;
        self.queue[i].user_label = Some(label);
        // the log already holds the label; a stale queue file is repaired on restore
        if let Err(e) = self.save_queue() {
            log::warn!("queue file not updated after labeling {item_id}: {e}");
        }
        Ok(&self.queue[i])
    }

    pub fn personal(&self) -> &Dataset {
        &self.personal
    }
}
