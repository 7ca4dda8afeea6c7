//! Session registry with optional file persistence.
//!
//! On disk each session is a directory holding `meta.json` (dataset source
//! and timestamps) and `log.jsonl` (one mutation per line, append-only).
//! Opening a store replays every log.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use driftscope_core::{AggregationSettings, CohortId, Dataset};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::session::{Applied, Mutation, Session};
use crate::source::DatasetSource;

const META_FILE: &str = "meta.json";
const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub dataset: DatasetSource,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub updated_at: u64,
}

/// Summary returned when a session is created or fetched.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionInfo {
    pub id: String,
    pub version: u64,
    pub created_at: u64,
    pub updated_at: u64,
    pub patients: usize,
    pub dimensions: usize,
    pub systems: Vec<String>,
    pub root: CohortId,
    pub baseline: CohortId,
    pub focus: CohortId,
    pub settings: AggregationSettings,
}

/// Everything needed to rebuild a session elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionExport {
    pub meta: SessionMeta,
    pub version: u64,
    pub log: Vec<Mutation>,
}

pub struct SessionHandle {
    meta: Mutex<SessionMeta>,
    state: RwLock<Session>,
}

impl SessionHandle {
    fn info(&self) -> SessionInfo {
        let meta = self.meta.lock().expect("meta lock").clone();
        let s = self.state.read().expect("session lock");
        let h = s.dataset().hierarchy();
        SessionInfo {
            id: meta.id,
            version: s.version(),
            created_at: meta.created_at,
            updated_at: meta.updated_at,
            patients: s.dataset().len(),
            dimensions: h.len(),
            systems: h.systems().into_iter().map(str::to_string).collect(),
            root: s.tree().root(),
            baseline: s.tree().baseline(),
            focus: s.tree().focus(),
            settings: s.settings().clone(),
        }
    }
}

pub struct SessionStore {
    root: Option<PathBuf>,
    sessions: RwLock<BTreeMap<String, Arc<SessionHandle>>>,
    /// Loaded datasets shared by sessions with the same source.
    datasets: Mutex<HashMap<String, Arc<Dataset>>>,
    next_id: AtomicU64,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn corrupt(path: &Path, message: impl ToString) -> ServiceError {
    ServiceError::Corrupt {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

impl SessionStore {
    /// A store that keeps sessions in memory only.
    pub fn in_memory() -> Self {
        Self {
            root: None,
            sessions: RwLock::new(BTreeMap::new()),
            datasets: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    /// Opens (creating if needed) a store under `dir` and restores every
    /// session found there.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut store = Self::in_memory();
        store.root = Some(dir.clone());
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(META_FILE).is_file())
            .collect();
        entries.sort();
        let mut max_seq = 0;
        for path in entries {
            let meta_path = path.join(META_FILE);
            let meta: SessionMeta =
                serde_json::from_str(&fs::read_to_string(&meta_path)?).map_err(|e| corrupt(&meta_path, e))?;
            let log_path = path.join(LOG_FILE);
            let mut log = Vec::new();
            if log_path.is_file() {
                for line in fs::read_to_string(&log_path)?.lines().filter(|l| !l.trim().is_empty()) {
                    log.push(serde_json::from_str::<Mutation>(line).map_err(|e| corrupt(&log_path, e))?);
                }
            }
            let dataset = store.dataset(&meta.dataset)?;
            let session = Session::replay(dataset, log)?;
            if let Some(seq) = meta.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max_seq = max_seq.max(seq);
            }
            log::info!("restored session {} at version {}", meta.id, session.version());
            store.sessions.write().expect("store lock").insert(
                meta.id.clone(),
                Arc::new(SessionHandle {
                    meta: Mutex::new(meta),
                    state: RwLock::new(session),
                }),
            );
        }
        store.next_id = AtomicU64::new(max_seq + 1);
        Ok(store)
    }

    fn dataset(&self, source: &DatasetSource) -> Result<Arc<Dataset>, ServiceError> {
        let key = source.cache_key();
        if let Some(ds) = self.datasets.lock().expect("dataset lock").get(&key) {
            return Ok(ds.clone());
        }
        let ds = Arc::new(source.load()?);
        self.datasets.lock().expect("dataset lock").insert(key, ds.clone());
        Ok(ds)
    }

    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(id))
    }

    /// Loads the dataset and registers a new session over it.
    pub fn create(&self, source: DatasetSource) -> Result<SessionInfo, ServiceError> {
        let id = format!("s{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let dataset = self.dataset(&source)?;
        let mut source = source;
        if let Some(dir) = self.session_dir(&id) {
            fs::create_dir_all(&dir)?;
            // Keep meta.json small: move inline uploads next to it.
            if let DatasetSource::Inline {
                hierarchy,
                patients,
                unknown_codes,
            } = &source
            {
                let (hp, pp) = (dir.join("hierarchy.csv"), dir.join("patients.jsonl"));
                fs::write(&hp, hierarchy)?;
                fs::write(&pp, patients)?;
                source = DatasetSource::Files {
                    hierarchy: hp,
                    patients: pp,
                    unknown_codes: *unknown_codes,
                };
                self.datasets
                    .lock()
                    .expect("dataset lock")
                    .insert(source.cache_key(), dataset.clone());
            }
        }
        let t = now();
        let meta = SessionMeta {
            id: id.clone(),
            dataset: source,
            created_at: t,
            updated_at: t,
        };
        if let Some(dir) = self.session_dir(&id) {
            write_meta(&dir, &meta)?;
            fs::File::create(dir.join(LOG_FILE))?;
        }
        let handle = Arc::new(SessionHandle {
            meta: Mutex::new(meta),
            state: RwLock::new(Session::new(dataset)),
        });
        let info = handle.info();
        self.sessions.write().expect("store lock").insert(id.clone(), handle);
        log::info!("created session {id}");
        Ok(info)
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ServiceError> {
        self.sessions
            .read()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().expect("store lock").keys().cloned().collect()
    }

    pub fn info(&self, id: &str) -> Result<SessionInfo, ServiceError> {
        Ok(self.handle(id)?.info())
    }

    /// Runs a read-only query against a consistent snapshot of the session.
    pub fn read<T>(&self, id: &str, f: impl FnOnce(&Session) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let handle = self.handle(id)?;
        let s = handle.state.read().expect("session lock");
        f(&s)
    }

    /// Applies a mutation. With `expected_version` set, the call fails with
    /// a conflict unless the session is still at that version.
    pub fn mutate(&self, id: &str, expected_version: Option<u64>, m: Mutation) -> Result<Applied, ServiceError> {
        let handle = self.handle(id)?;
        let mut s = handle.state.write().expect("session lock");
        if let Some(expected) = expected_version {
            if expected != s.version() {
                return Err(ServiceError::VersionConflict {
                    expected,
                    actual: s.version(),
                });
            }
        }
        let line = serde_json::to_string(&m).expect("mutations serialize");
        let applied = s.apply(m)?;
        let mut meta = handle.meta.lock().expect("meta lock");
        meta.updated_at = now();
        if let Some(dir) = self.session_dir(id) {
            if let Err(e) = append_line(&dir.join(LOG_FILE), &line).and_then(|_| write_meta(&dir, &meta)) {
                // Roll the in-memory state back so it matches the file.
                let previous = s.log()[..s.log().len() - 1].to_vec();
                *s = Session::replay(s.dataset().clone(), previous)?;
                return Err(e);
            }
        }
        Ok(applied)
    }

    pub fn export(&self, id: &str) -> Result<SessionExport, ServiceError> {
        let handle = self.handle(id)?;
        let s = handle.state.read().expect("session lock");
        let meta = handle.meta.lock().expect("meta lock").clone();
        Ok(SessionExport {
            meta,
            version: s.version(),
            log: s.log().to_vec(),
        })
    }
}

fn write_meta(dir: &Path, meta: &SessionMeta) -> Result<(), ServiceError> {
    let tmp = dir.join(format!("{META_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(meta).expect("meta serializes"))?;
    fs::rename(tmp, dir.join(META_FILE))?;
    Ok(())
}

fn append_line(path: &Path, line: &str) -> Result<(), ServiceError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    f.sync_data()?;
    Ok(())
}
