use std::collections::BTreeMap;

use lm2m_core::wire::{Code, Path, ResourceValue};

pub const MANUFACTURER: &str = "ERTIS-SIM";
pub const MODEL: &str = "SIM-1";

pub const SECURITY_SERVER_URI: Path = Path::resource(0, 0, 0);
pub const SECURITY_IDENTITY: Path = Path::resource(0, 0, 3);
pub const SECURITY_SECRET: Path = Path::resource(0, 0, 5);
pub const SERVER_SHORT_ID: Path = Path::resource(1, 0, 0);
pub const SERVER_LIFETIME: Path = Path::resource(1, 0, 1);
pub const SERVER_UPDATE_TRIGGER: Path = Path::resource(1, 0, 8);
pub const DEVICE_MANUFACTURER: Path = Path::resource(3, 0, 0);
pub const DEVICE_MODEL: Path = Path::resource(3, 0, 1);
pub const DEVICE_SERIAL: Path = Path::resource(3, 0, 2);
pub const DEVICE_REBOOT: Path = Path::resource(3, 0, 4);
pub const TEMPERATURE: Path = Path::resource(3303, 0, 5700);

const EXECUTABLE: [Path; 2] = [SERVER_UPDATE_TRIGGER, DEVICE_REBOOT];
const WRITABLE: [Path; 1] = [SERVER_LIFETIME];

/// What the device does after acknowledging an execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Reboot,
    UpdateRegistration,
}

/// Resource values of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectStore {
    values: BTreeMap<Path, ResourceValue>,
}

impl ObjectStore {
    /// Factory state: security object points at the bootstrap server, no
    /// server credentials yet.
    pub fn fixture(endpoint: &str, bootstrap_uri: &str, lifetime_s: u64, temperature: f64) -> Self {
        let values = BTreeMap::from([
            (SECURITY_SERVER_URI, ResourceValue::Text(bootstrap_uri.to_owned())),
            (SECURITY_IDENTITY, ResourceValue::None),
            (SECURITY_SECRET, ResourceValue::None),
            (SERVER_SHORT_ID, ResourceValue::Integer(1)),
            (SERVER_LIFETIME, ResourceValue::Integer(lifetime_s as i64)),
            (SERVER_UPDATE_TRIGGER, ResourceValue::None),
            (DEVICE_MANUFACTURER, ResourceValue::Text(MANUFACTURER.into())),
            (DEVICE_MODEL, ResourceValue::Text(MODEL.into())),
            (DEVICE_SERIAL, ResourceValue::Text(endpoint.to_owned())),
            (DEVICE_REBOOT, ResourceValue::None),
            (TEMPERATURE, ResourceValue::Float(temperature)),
        ]);
        Self { values }
    }

    /// Object instances announced at registration. The security object is
    /// never announced.
    pub fn links() -> Vec<Path> {
        vec![Path::instance(1, 0), Path::instance(3, 0), Path::instance(3303, 0)]
    }

    pub fn get(&self, path: &Path) -> Option<&ResourceValue> {
        self.values.get(path)
    }

    /// Local write that bypasses access rules.
    pub fn set(&mut self, path: Path, value: ResourceValue) {
        self.values.insert(path, value);
    }

    pub fn lifetime_s(&self) -> u64 {
        match self.values.get(&SERVER_LIFETIME) {
            Some(ResourceValue::Integer(v)) if *v > 0 => *v as u64,
            _ => 1,
        }
    }

    pub fn read(&self, path: &Path) -> Result<ResourceValue, Code> {
        if path.object == 0 {
            return Err(Code::Unauthorized);
        }
        let v = self.values.get(path).ok_or(Code::NotFound)?;
        if EXECUTABLE.contains(path) {
            return Err(Code::MethodNotAllowed);
        }
        Ok(v.clone())
    }

    pub fn write(&mut self, path: &Path, value: ResourceValue) -> Result<(), Code> {
        if path.object == 0 {
            return Err(Code::Unauthorized);
        }
        let current = self.values.get(path).ok_or(Code::NotFound)?;
        if !WRITABLE.contains(path) {
            return Err(Code::MethodNotAllowed);
        }
        if !current.same_kind(&value) {
            return Err(Code::BadRequest);
        }
        if *path == SERVER_LIFETIME && !matches!(value, ResourceValue::Integer(v) if v > 0) {
            return Err(Code::BadRequest);
        }
        self.values.insert(*path, value);
        Ok(())
    }

    pub fn execute(&self, path: &Path) -> Result<Action, Code> {
        if path.object == 0 {
            return Err(Code::Unauthorized);
        }
        if !self.values.contains_key(path) {
            return Err(Code::NotFound);
        }
        match *path {
            DEVICE_REBOOT => Ok(Action::Reboot),
            SERVER_UPDATE_TRIGGER => Ok(Action::UpdateRegistration),
            _ => Err(Code::MethodNotAllowed),
        }
    }
}
