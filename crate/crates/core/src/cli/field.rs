//! Reference field files: a JSON header with mesh metadata and a config hash,
//! followed by the coefficients as base64-encoded little-endian `f64`.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::fem::{DofMap, VelocityField};

pub const FIELD_FORMAT: &str = "cdanse-field/1";

/// Parameters that determine a reference solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceKey {
    pub n: usize,
    #[serde(rename = "Re")]
    pub re: f64,
    pub lid_value: [f64; 2],
    pub gamma_gd: f64,
}

impl ReferenceKey {
    /// SHA-256 of the key's JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("key serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub format: String,
    pub n: usize,
    #[serde(rename = "Re")]
    pub re: f64,
    pub n_u: usize,
    pub n_p: usize,
    pub config_hash: String,
    pub nonlinear_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FieldFile {
    header: FieldHeader,
    velocity: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceField {
    pub header: FieldHeader,
    pub velocity: VelocityField,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(s: &str) -> Result<Vec<f64>, CliError> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| CliError::Reference(format!("bad payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(CliError::Reference(format!("payload of {} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl ReferenceField {
    pub fn new(key: &ReferenceKey, dofmap: &DofMap, velocity: VelocityField, nonlinear_residual: f64) -> Self {
        Self {
            header: FieldHeader {
                format: FIELD_FORMAT.into(),
                n: key.n,
                re: key.re,
                n_u: dofmap.n_u(),
                n_p: dofmap.n_p(),
                config_hash: key.hash(),
                nonlinear_residual,
            },
            velocity,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let file = FieldFile {
            header: self.header.clone(),
            velocity: encode(&self.velocity.0),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("field serializes");
        s.push('\n');
        s.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let file: FieldFile =
            serde_json::from_slice(bytes).map_err(|e| CliError::Reference(format!("bad field file: {e}")))?;
        if file.header.format != FIELD_FORMAT {
            return Err(CliError::Reference(format!("unsupported format {:?}", file.header.format)));
        }
        let velocity = decode(&file.velocity)?;
        if velocity.len() != file.header.n_u {
            return Err(CliError::Reference(format!(
                "payload has {} values, header says {}",
                velocity.len(),
                file.header.n_u
            )));
        }
        Ok(Self {
            header: file.header,
            velocity: VelocityField(velocity),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| {
            CliError::Reference(format!(
                "cannot read reference {}: {e} (run the `reference` command first)",
                path.display()
            ))
        })?;
        Self::from_bytes(&bytes)
    }

    /// Checks that this field belongs to `key` on `dofmap`.
    pub fn check(&self, key: &ReferenceKey, dofmap: &DofMap) -> Result<(), CliError> {
        if self.header.n != key.n || self.header.n_u != dofmap.n_u() {
            return Err(CliError::Reference(format!(
                "reference is for mesh n={} ({} velocity dofs), run uses n={} ({} velocity dofs)",
                self.header.n,
                self.header.n_u,
                key.n,
                dofmap.n_u()
            )));
        }
        if self.header.config_hash != key.hash() {
            return Err(CliError::Reference(format!(
                "reference was computed for Re={} with a different lid value or grad-div parameter than this run (Re={})",
                self.header.re, key.re
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    #[test]
    fn round_trip_is_bit_exact() {
        let d = DofMap::new(Mesh::uniform_cavity(3).unwrap());
        let mut u = d.interpolate(|x, y| [x.sin() / 3.0, -y * 1e-300]);
        u.0[0] = f64::MIN_POSITIVE;
        u.0[1] = -0.0;
        let key = ReferenceKey {
            n: 3,
            re: 100.0,
            lid_value: [1.0, 0.0],
            gamma_gd: 1.0,
        };
        let f = ReferenceField::new(&key, &d, u.clone(), 1e-15);
        let back = ReferenceField::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(back.velocity.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), u.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back.header, f.header);
        back.check(&key, &d).unwrap();
        let other = ReferenceKey { re: 200.0, ..key.clone() };
        assert!(back.check(&other, &d).is_err());
        let d4 = DofMap::new(Mesh::uniform_cavity(4).unwrap());
        assert!(back.check(&ReferenceKey { n: 4, ..key }, &d4).is_err());
    }

    #[test]
    fn hash_is_stable_hex() {
        let key = ReferenceKey {
            n: 16,
            re: 100.0,
            lid_value: [1.0, 0.0],
            gamma_gd: 1.0,
        };
        let h = key.hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, key.clone().hash());
        assert_ne!(h, ReferenceKey { gamma_gd: 0.5, ..key }.hash());
    }

    #[test]
    fn rejects_truncated_payload() {
        let bad = br#"{"header":{"format":"cdanse-field/1","n":2,"Re":1.0,"n_u":2,"n_p":9,"config_hash":"","nonlinear_residual":0.0},"velocity":"AAAA"}"#;
        assert!(ReferenceField::from_bytes(bad).is_err());
    }
}
