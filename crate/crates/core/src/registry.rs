//! Device registry with optional JSON snapshot persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::BROADCAST;
use crate::node::MeshRole;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub name: String,
    pub device_id: u32,
    pub sensor_type: String,
    pub latitude: f64,
    pub longitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub mesh_role: MeshRole,
}

/// Partial update; absent fields are left unchanged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceUpdate {
    pub name: Option<String>,
    pub sensor_type: Option<String>,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub notes: Option<String>,
    pub mesh_role: Option<MeshRole>,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("device {0} is already registered")]
    DuplicateDeviceId(u32),
    #[error("device ID 0 is reserved for broadcast")]
    ReservedId,
    #[error("coordinates ({0}, {1}) out of range")]
    InvalidCoordinates(f64, f64),
    #[error("device {0} not found")]
    NotFound(u32),
    #[error("registry snapshot {path}: {source}")]
    Snapshot {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn check_coordinates(lat: f64, lon: f64) -> Result<(), RegistryError> {
    if (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
        Ok(())
    } else {
        Err(RegistryError::InvalidCoordinates(lat, lon))
    }
}

impl DeviceRecord {
    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.device_id == BROADCAST {
            return Err(RegistryError::ReservedId);
        }
        check_coordinates(self.latitude, self.longitude)
    }
}

#[derive(Debug, Default)]
pub struct Registry {
    devices: BTreeMap<u32, DeviceRecord>,
    snapshot: Option<PathBuf>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a registry persisted at `path`, loading it if the file exists.
    /// Every later mutation rewrites the file.
    pub fn with_snapshot(path: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let path = path.into();
        let devices = match fs::read(&path) {
            Ok(bytes) => {
                let list: Vec<DeviceRecord> = serde_json::from_slice(&bytes).map_err(|e| RegistryError::Snapshot {
                    path: path.clone(),
                    source: e.into(),
                })?;
                list.into_iter().map(|d| (d.device_id, d)).collect()
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => BTreeMap::new(),
            Err(source) => return Err(RegistryError::Snapshot { path, source }),
        };
        Ok(Registry {
            devices,
            snapshot: Some(path),
        })
    }

    pub fn snapshot_path(&self) -> Option<&Path> {
        self.snapshot.as_deref()
    }

    fn persist(&self) -> Result<(), RegistryError> {
        let Some(path) = &self.snapshot else {
            return Ok(());
        };
        let wrap = |source: io::Error| RegistryError::Snapshot {
            path: path.clone(),
            source,
        };
        let body = serde_json::to_vec_pretty(&self.list()).map_err(|e| wrap(e.into()))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, body).map_err(wrap)?;
        fs::rename(&tmp, path).map_err(wrap)
    }

    pub fn register(&mut self, record: DeviceRecord) -> Result<DeviceRecord, RegistryError> {
        record.validate()?;
        if self.devices.contains_key(&record.device_id) {
            return Err(RegistryError::DuplicateDeviceId(record.device_id));
        }
        self.devices.insert(record.device_id, record.clone());
        self.persist()?;
        Ok(record)
    }

    pub fn update(&mut self, id: u32, update: DeviceUpdate) -> Result<DeviceRecord, RegistryError> {
        let current = self.devices.get(&id).ok_or(RegistryError::NotFound(id))?;
        let mut next = current.clone();
        if let Some(name) = update.name {
            next.name = name;
        }
        if let Some(sensor_type) = update.sensor_type {
            next.sensor_type = sensor_type;
        }
        if let Some(lat) = update.latitude {
            next.latitude = lat;
        }
        if let Some(lon) = update.longitude {
            next.longitude = lon;
        }
        if let Some(notes) = update.notes {
            next.notes = Some(notes);
        }
        if let Some(role) = update.mesh_role {
            next.mesh_role = role;
        }
        next.validate()?;
        self.devices.insert(id, next.clone());
        self.persist()?;
        Ok(next)
    }

    pub fn delete(&mut self, id: u32) -> Result<DeviceRecord, RegistryError> {
        let removed = self.devices.remove(&id).ok_or(RegistryError::NotFound(id))?;
        self.persist()?;
        Ok(removed)
    }

    pub fn get(&self, id: u32) -> Result<&DeviceRecord, RegistryError> {
        self.devices.get(&id).ok_or(RegistryError::NotFound(id))
    }

    pub fn contains(&self, id: u32) -> bool {
        self.devices.contains_key(&id)
    }

    /// All devices in ascending ID order.
    pub fn list(&self) -> Vec<DeviceRecord> {
        self.devices.values().cloned().collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.devices.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }
}
