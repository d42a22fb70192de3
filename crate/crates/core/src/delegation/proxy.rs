//! The proxy-credential baseline.
//!
//! A proxy credential grants its owner's whole privilege set to whoever
//! holds it, for as long as its window is open. Nothing about the entity
//! or the acting agent enters the decision.

use std::collections::{BTreeSet, HashMap};

use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64URL;
use base64::Engine as _;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::time::{Epoch, Window};

use super::Privilege;

/// Lifetime of credentials handed out by [`MyProxy::retrieve`].
pub const DERIVED_LIFETIME: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyCredential {
    pub owner: String,
    pub serial: u64,
    pub t_issued: Epoch,
    pub t_expires: Epoch,
    pub privileges: BTreeSet<Privilege>,
    /// Expiry of the long-lived credential this one was derived from.
    pub renewable_until: Option<Epoch>,
    pub elevated_role: bool,
}

impl ProxyCredential {
    /// Returns `None` unless `t_issued < t_expires`.
    pub fn new(
        owner: impl Into<String>,
        serial: u64,
        t_issued: Epoch,
        t_expires: Epoch,
        privileges: impl IntoIterator<Item = Privilege>,
    ) -> Option<Self> {
        (t_issued < t_expires).then(|| ProxyCredential {
            owner: owner.into(),
            serial,
            t_issued,
            t_expires,
            privileges: privileges.into_iter().collect(),
            renewable_until: None,
            elevated_role: false,
        })
    }

    pub fn window(&self) -> Window {
        Window {
            not_before: self.t_issued,
            not_after: self.t_expires,
        }
    }
}

/// Everything `pc` grants at `t`: the full set inside the window, nothing
/// outside it.
pub fn gamma_pc(pc: &ProxyCredential, t: Epoch) -> BTreeSet<Privilege> {
    if t < pc.t_issued || t >= pc.t_expires {
        BTreeSet::new()
    } else {
        pc.privileges.clone()
    }
}

/// Whether `pc` lets its holder exercise `privilege` on `entity` as `agent`.
/// The entity and agent are accepted for symmetry with concessions and have
/// no effect.
pub fn proxy_authorizes(
    pc: &ProxyCredential,
    privilege: Privilege,
    _entity: &str,
    _agent: Option<&str>,
    t: Epoch,
) -> bool {
    gamma_pc(pc, t).contains(&privilege)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MyProxyError {
    #[error("no credential stored under that key")]
    UnknownKey,
    #[error("stored credential has expired")]
    FirstOrderExpired,
    #[error("credential is not valid at storage time")]
    NotValidAtStore,
}

/// A credential repository that hands short-lived proxies to anyone holding
/// a retrieval key. Callers serialise access; it is not internally locked.
#[derive(Debug)]
pub struct MyProxy {
    rng: ChaCha20Rng,
    stored: HashMap<String, ProxyCredential>,
    next_serial: u64,
    derived_lifetime: i64,
    retrievals: u64,
}

impl MyProxy {
    pub fn new(seed: u64) -> Self {
        MyProxy {
            rng: ChaCha20Rng::seed_from_u64(seed),
            stored: HashMap::new(),
            next_serial: 1,
            derived_lifetime: DERIVED_LIFETIME,
            retrievals: 0,
        }
    }

    pub fn with_lifetime(mut self, seconds: i64) -> Self {
        self.derived_lifetime = seconds;
        self
    }

    /// Stores `pc` and returns a random retrieval key.
    pub fn store(&mut self, pc: ProxyCredential, now: Epoch) -> Result<String, MyProxyError> {
        if !pc.window().contains(now) {
            return Err(MyProxyError::NotValidAtStore);
        }
        let mut raw = [0u8; 16];
        self.rng.fill_bytes(&mut raw);
        let key = B64URL.encode(raw);
        self.stored.insert(key.clone(), pc);
        Ok(key)
    }

    /// A fresh proxy for the stored credential's owner, valid from `now`.
    /// Any caller presenting the key gets one.
    pub fn retrieve(&mut self, key: &str, now: Epoch) -> Result<ProxyCredential, MyProxyError> {
        let first = self.stored.get(key).ok_or(MyProxyError::UnknownKey)?;
        if now >= first.t_expires {
            return Err(MyProxyError::FirstOrderExpired);
        }
        let serial = self.next_serial;
        self.next_serial += 1;
        self.retrievals += 1;
        Ok(ProxyCredential {
            owner: first.owner.clone(),
            serial,
            t_issued: now,
            t_expires: now + self.derived_lifetime,
            privileges: first.privileges.clone(),
            renewable_until: Some(first.t_expires),
            elevated_role: first.elevated_role,
        })
    }

    pub fn retrievals(&self) -> u64 {
        self.retrievals
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pc(nb: Epoch, na: Epoch) -> ProxyCredential {
        ProxyCredential::new("testuser", 0, nb, na, Privilege::ALL).unwrap()
    }

    #[test]
    fn window_edges() {
        let p = pc(100, 200);
        assert_eq!(gamma_pc(&p, 150).len(), 4);
        assert!(gamma_pc(&p, 200).is_empty());
        assert!(gamma_pc(&p, 99).is_empty());
        assert_eq!(gamma_pc(&p, 100).len(), 4);
    }

    #[test]
    fn myproxy_derives_day_long_credentials() {
        let mut mp = MyProxy::new(7);
        let key = mp.store(pc(0, 1_000_000), 10).unwrap();
        let a = mp.retrieve(&key, 500).unwrap();
        assert_eq!(a.window().len(), DERIVED_LIFETIME);
        let b = mp.retrieve(&key, 500).unwrap();
        assert_ne!(a.serial, b.serial);
        assert_eq!(a.owner, b.owner);
        assert_eq!(mp.retrieve(&key, 1_000_000), Err(MyProxyError::FirstOrderExpired));
        assert_eq!(mp.retrieve("nope", 500), Err(MyProxyError::UnknownKey));
    }

    #[test]
    fn store_requires_valid_credential() {
        let mut mp = MyProxy::new(0);
        assert_eq!(mp.store(pc(100, 200), 200), Err(MyProxyError::NotValidAtStore));
    }

    proptest! {
        #[test]
        fn grant_ignores_entity_and_agent(
            nb in -1000i64..1000, len in 1i64..1000, t in -3000i64..3000,
            entity in "[a-z/]{0,12}", agent in proptest::option::of("[A-Za-z0-9]{1,8}"),
        ) {
            let p = pc(nb, nb + len);
            let inside = nb <= t && t < nb + len;
            for priv_ in Privilege::ALL {
                prop_assert_eq!(proxy_authorizes(&p, priv_, &entity, agent.as_deref(), t), inside);
                prop_assert_eq!(
                    proxy_authorizes(&p, priv_, &entity, agent.as_deref(), t),
                    proxy_authorizes(&p, priv_, "/elsewhere", None, t)
                );
            }
        }
    }
}
