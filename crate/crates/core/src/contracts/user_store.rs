use std::collections::HashMap;

use indexmap::IndexMap;

use super::{decode_args, Abort, ContractError, GasMeter, UserRecord};
use crate::canon::{Canonical, Encoder};

/// Username to user record, in insertion order, with an email index.
///
/// Usernames and emails share one lookup namespace because `validateLogin`
/// accepts either: no identifier may name two different users.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserStore {
    users: IndexMap<String, UserRecord>,
    emails: HashMap<String, String>,
}

impl UserStore {
    pub fn user_exists(&self, username: &str) -> bool {
        self.users.contains_key(username)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn entries(&self) -> Vec<(String, UserRecord)> {
        self.users
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Record whose username or email equals `wildcard`.
    pub fn lookup(&self, wildcard: &str) -> Option<&UserRecord> {
        self.users
            .get(wildcard)
            .or_else(|| self.emails.get(wildcard).and_then(|u| self.users.get(u)))
    }

    /// True if `id` identifies some user other than `owner`.
    fn taken_by_other(&self, id: &str, owner: &str) -> bool {
        self.lookup(id).is_some_and(|u| u.username != owner)
    }

    pub(crate) fn execute(&mut self, function: &str, args: &[u8], gas: &mut GasMeter) -> Result<(), Abort> {
        let (username, user_data) = match function {
            "addUser" | "updateUser" => {
                decode_args(args, |d| Ok((d.string()?, UserRecord::decode_from(d)?)))?
            }
            _ => return Err(Abort::revert("unknown function")),
        };
        gas.charge_read(username.len() + user_data.email.len())?;
        if user_data.username != username {
            return Err(Abort::revert("username mismatch"));
        }
        user_data
            .validate()
            .map_err(|e| Abort::revert(format!("invalid user record: {e}")))?;
        if function == "addUser" {
            self.add_user(username, user_data, gas)
        } else {
            self.update_user(username, user_data, gas)
        }
    }

    pub(crate) fn query(&self, function: &str, args: &[u8]) -> Result<Vec<u8>, ContractError> {
        match function {
            "getAllUsers" => Ok(self.entries().to_canonical()),
            "validateLogin" => {
                let wildcard = String::from_canonical(args)?;
                self.lookup(&wildcard)
                    .map(Canonical::to_canonical)
                    .ok_or(ContractError::NotFound)
            }
            "userExists" => {
                let username = String::from_canonical(args)?;
                let mut enc = Encoder::new();
                enc.bool(self.user_exists(&username));
                Ok(enc.finish())
            }
            other => Err(ContractError::UnknownFunction(other.to_owned())),
        }
    }

    fn add_user(&mut self, username: String, data: UserRecord, gas: &mut GasMeter) -> Result<(), Abort> {
        if self.lookup(&username).is_some() || self.lookup(&data.email).is_some() {
            return Err(Abort::revert("user exists"));
        }
        gas.charge_store(username.len() + data.to_canonical().len())?;
        self.emails.insert(data.email.clone(), username.clone());
        self.users.insert(username, data);
        Ok(())
    }

    fn update_user(&mut self, username: String, data: UserRecord, gas: &mut GasMeter) -> Result<(), Abort> {
        if !self.user_exists(&username) {
            return Err(Abort::revert("user not found"));
        }
        if self.taken_by_other(&data.email, &username) {
            return Err(Abort::revert("email in use"));
        }
        gas.charge_store(username.len() + data.to_canonical().len())?;
        let old_email = self.users[&username].email.clone();
        self.emails.remove(&old_email);
        self.emails.insert(data.email.clone(), username.clone());
        self.users.insert(username, data);
        Ok(())
    }
}
