use super::{decode_args, Abort, AnomalyRecord, ContractError, GasMeter};
use crate::canon::{Canonical, Encoder};

/// Append-only list of anomalies. Entries are never modified or removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnomalyStore {
    anomalies: Vec<AnomalyRecord>,
}

impl AnomalyStore {
    pub fn num_anomalies(&self) -> usize {
        self.anomalies.len()
    }

    pub fn all(&self) -> &[AnomalyRecord] {
        &self.anomalies
    }

    pub(crate) fn execute(&mut self, function: &str, args: &[u8], gas: &mut GasMeter) -> Result<(), Abort> {
        match function {
            "addAnomaly" => {
                let anomaly = decode_args(args, AnomalyRecord::decode_from)?;
                self.add_anomaly(anomaly, gas)
            }
            _ => Err(Abort::revert("unknown function")),
        }
    }

    pub(crate) fn query(&self, function: &str, args: &[u8]) -> Result<Vec<u8>, ContractError> {
        match function {
            "getAllAnomalies" => Ok(self.anomalies.to_canonical()),
            "getNumAnomalies" => {
                let mut enc = Encoder::new();
                enc.u64(self.num_anomalies() as u64);
                Ok(enc.finish())
            }
            // 1-based, matching the append index
            "anomalyExists" => {
                let index = u64::from_canonical(args)?;
                let mut enc = Encoder::new();
                enc.bool(index >= 1 && index <= self.num_anomalies() as u64);
                Ok(enc.finish())
            }
            other => Err(ContractError::UnknownFunction(other.to_owned())),
        }
    }

    fn add_anomaly(&mut self, anomaly: AnomalyRecord, gas: &mut GasMeter) -> Result<(), Abort> {
        anomaly
            .validate()
            .map_err(|e| Abort::revert(format!("invalid anomaly: {e}")))?;
        gas.charge_store(anomaly.to_canonical().len())?;
        self.anomalies.push(anomaly);
        Ok(())
    }
}
