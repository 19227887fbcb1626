use indexmap::IndexMap;

use super::{decode_args, Abort, ClientRecord, ContractError, GasMeter};
use crate::canon::{Canonical, Encoder};

/// Endpoint name to client configuration, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientStore {
    clients: IndexMap<String, ClientRecord>,
}

impl ClientStore {
    pub fn client_exists(&self, endpoint: &str) -> bool {
        self.clients.contains_key(endpoint)
    }

    pub fn get(&self, endpoint: &str) -> Option<&ClientRecord> {
        self.clients.get(endpoint)
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn entries(&self) -> Vec<(String, ClientRecord)> {
        self.clients
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub(crate) fn execute(&mut self, function: &str, args: &[u8], gas: &mut GasMeter) -> Result<(), Abort> {
        match function {
            "addClient" => {
                let (endpoint, config) = decode_args(args, |d| {
                    Ok((d.string()?, ClientRecord::decode_from(d)?))
                })?;
                self.add_client(endpoint, config, gas)
            }
            "removeClient" => {
                let endpoint = decode_args(args, |d| d.string())?;
                self.remove_client(&endpoint, gas)
            }
            _ => Err(Abort::revert("unknown function")),
        }
    }

    pub(crate) fn query(&self, function: &str, args: &[u8]) -> Result<Vec<u8>, ContractError> {
        match function {
            "getClient" => {
                let endpoint = String::from_canonical(args)?;
                self.get(&endpoint)
                    .map(Canonical::to_canonical)
                    .ok_or(ContractError::NotFound)
            }
            "getAllClients" => Ok(self.entries().to_canonical()),
            "clientExists" => {
                let endpoint = String::from_canonical(args)?;
                let mut enc = Encoder::new();
                enc.bool(self.client_exists(&endpoint));
                Ok(enc.finish())
            }
            other => Err(ContractError::UnknownFunction(other.to_owned())),
        }
    }

    fn add_client(&mut self, endpoint: String, config: ClientRecord, gas: &mut GasMeter) -> Result<(), Abort> {
        gas.charge_read(endpoint.len())?;
        if endpoint != config.endpoint {
            return Err(Abort::revert("endpoint mismatch"));
        }
        config
            .validate()
            .map_err(|e| Abort::revert(format!("invalid client record: {e}")))?;
        if self.client_exists(&endpoint) {
            return Err(Abort::revert("client exists"));
        }
        gas.charge_store(endpoint.len() + config.to_canonical().len())?;
        self.clients.insert(endpoint, config);
        Ok(())
    }

    fn remove_client(&mut self, endpoint: &str, gas: &mut GasMeter) -> Result<(), Abort> {
        gas.charge_read(endpoint.len())?;
        if !self.client_exists(endpoint) {
            return Err(Abort::revert("client not found"));
        }
        self.clients.shift_remove(endpoint);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{ContractCall, ContractState};
    use super::*;

    fn exec(st: &mut ContractState, call: ContractCall) -> Result<(), Abort> {
        st.execute(&call.contract, &call.function, &call.args, &mut meter())
    }

    fn get(st: &ContractState, ep: &str) -> Result<ClientRecord, ContractError> {
        let c = ContractCall::get_client(ep);
        let out = st.query(&c.contract, &c.function, &c.args)?;
        Ok(ClientRecord::from_canonical(&out)?)
    }

    fn all(st: &ContractState) -> Vec<String> {
        let c = ContractCall::get_all_clients();
        let out = st.query(&c.contract, &c.function, &c.args).unwrap();
        Vec::<(String, ClientRecord)>::from_canonical(&out)
            .unwrap()
            .into_iter()
            .map(|(k, _)| k)
            .collect()
    }

    #[test]
    fn add_then_get() {
        let mut st = ContractState::default();
        exec(&mut st, ContractCall::add_client(&client("dev-1"))).unwrap();
        assert_eq!(get(&st, "dev-1").unwrap(), client("dev-1"));
    }

    #[test]
    fn duplicate_add_reverts_without_change() {
        let mut st = ContractState::default();
        exec(&mut st, ContractCall::add_client(&client("dev-1"))).unwrap();
        let before = st.snapshot();
        let mut cfg2 = client("dev-1");
        cfg2.server_uri = "coap://10.0.0.1:5683".into();
        assert_eq!(
            exec(&mut st, ContractCall::add_client(&cfg2)),
            Err(Abort::Revert("client exists".into()))
        );
        assert_eq!(st.snapshot(), before);
        assert_eq!(get(&st, "dev-1").unwrap(), client("dev-1"));
    }

    #[test]
    fn empty_endpoint_reverts() {
        let mut st = ContractState::default();
        assert!(matches!(
            exec(&mut st, ContractCall::add_client(&client(""))),
            Err(Abort::Revert(_))
        ));
        assert!(st.clients.is_empty());
    }

    #[test]
    fn get_missing_is_not_found() {
        let st = ContractState::default();
        assert_eq!(get(&st, "missing"), Err(ContractError::NotFound));
    }

    #[test]
    fn insertion_order_and_removal() {
        let mut st = ContractState::default();
        assert!(all(&st).is_empty());
        exec(&mut st, ContractCall::add_client(&client("A"))).unwrap();
        exec(&mut st, ContractCall::add_client(&client("B"))).unwrap();
        assert_eq!(all(&st), ["A", "B"]);
        exec(&mut st, ContractCall::remove_client("A")).unwrap();
        assert_eq!(all(&st), ["B"]);
        assert_eq!(get(&st, "A"), Err(ContractError::NotFound));
    }

    #[test]
    fn remove_absent_reverts_and_name_is_reusable() {
        let mut st = ContractState::default();
        assert_eq!(
            exec(&mut st, ContractCall::remove_client("x")),
            Err(Abort::Revert("client not found".into()))
        );
        exec(&mut st, ContractCall::add_client(&client("x"))).unwrap();
        exec(&mut st, ContractCall::remove_client("x")).unwrap();
        exec(&mut st, ContractCall::add_client(&client("x"))).unwrap();
        assert_eq!(all(&st), ["x"]);
    }
}
