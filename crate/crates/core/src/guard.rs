//! In-process model of the guard that travels with a released document:
//! it re-derives the tracing value from the revoked token and the host MAC,
//! lurks on the licensed host, and self-destructs elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Digest, MacAddress, ProtocolHasher, SwId, Timestamp, VulId};
use crate::token::{tracing_value, Trailer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostEnvironment {
    pub mac: MacAddress,
    pub now: Timestamp,
}

/// `V_c`: 0 when the recomputed binding equals the embedded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerificationFlag {
    Match,
    Mismatch,
}

impl VerificationFlag {
    pub fn value(self) -> u8 {
        match self {
            VerificationFlag::Match => 0,
            VerificationFlag::Mismatch => 1,
        }
    }
}

/// The record a triggered guard reports back to the authority.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackMessage {
    pub tracing_value: Digest,
    pub vul_id: VulId,
    pub sw_id: SwId,
    pub mac_current: MacAddress,
    pub t_feedback: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GuardVerdict {
    Lurk,
    Destroyed(FeedbackMessage),
    DestroyedSilent,
    FalseDocObserved(FeedbackMessage),
}

impl GuardVerdict {
    pub fn destroys(&self) -> bool {
        matches!(
            self,
            GuardVerdict::Destroyed(_) | GuardVerdict::DestroyedSilent
        )
    }

    pub fn feedback(&self) -> Option<&FeedbackMessage> {
        match self {
            GuardVerdict::Destroyed(fb) | GuardVerdict::FalseDocObserved(fb) => Some(fb),
            _ => None,
        }
    }
}

/// What the guard knows about the licence it protects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuardContext {
    pub sw_id: SwId,
    pub vul_id: VulId,
}

pub fn verify_binding(
    hasher: &ProtocolHasher,
    embedded: &[u8],
    revoked_token_value: &Digest,
    mac: &MacAddress,
) -> VerificationFlag {
    if tracing_value(hasher, revoked_token_value, mac).as_bytes() == embedded {
        VerificationFlag::Match
    } else {
        VerificationFlag::Mismatch
    }
}

/// `None` when the document carries no intact tracing token.
pub fn self_check(
    hasher: &ProtocolHasher,
    sealed: &[u8],
    revoked_token_value: &Digest,
    env: &HostEnvironment,
) -> Option<VerificationFlag> {
    let trailer = Trailer::parse(sealed)?;
    let embedded = trailer.unanimous_value().ok()?;
    Some(verify_binding(
        hasher,
        embedded.as_bytes(),
        revoked_token_value,
        &env.mac,
    ))
}

/// Runs the guard on a host.
///
/// Missing or corrupt tokens destroy silently. On the licensed host the
/// document lurks, unless it is an expired false document. Off host, a
/// real document is destroyed with feedback; a false document reports
/// feedback and survives until its valid time passes, then destroys
/// silently. Exactly one protocol hash is spent when a token is present.
pub fn enforce(
    hasher: &ProtocolHasher,
    sealed: &[u8],
    revoked_token_value: &Digest,
    env: &HostEnvironment,
    ctx: &GuardContext,
) -> GuardVerdict {
    let Some(trailer) = Trailer::parse(sealed) else {
        return GuardVerdict::DestroyedSilent;
    };
    let Ok(embedded) = trailer.unanimous_value() else {
        return GuardVerdict::DestroyedSilent;
    };
    let flag = verify_binding(hasher, embedded.as_bytes(), revoked_token_value, &env.mac);
    let expired = trailer.is_false && trailer.valid_until.map_or(true, |until| env.now > until);
    let feedback = || FeedbackMessage {
        tracing_value: embedded.clone(),
        vul_id: ctx.vul_id.clone(),
        sw_id: ctx.sw_id.clone(),
        mac_current: env.mac,
        t_feedback: env.now,
    };
    match flag {
        VerificationFlag::Match if expired => GuardVerdict::DestroyedSilent,
        VerificationFlag::Match => GuardVerdict::Lurk,
        VerificationFlag::Mismatch if !trailer.is_false => GuardVerdict::Destroyed(feedback()),
        VerificationFlag::Mismatch if !expired => GuardVerdict::FalseDocObserved(feedback()),
        VerificationFlag::Mismatch => GuardVerdict::DestroyedSilent,
    }
}

/// A document copy on some host together with the guard sealed inside it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtectedCopy {
    pub bytes: Vec<u8>,
    pub revoked_token_value: Digest,
    pub ctx: GuardContext,
    pub host: MacAddress,
}

impl ProtectedCopy {
    pub fn enforce(&self, hasher: &ProtocolHasher, now: Timestamp) -> GuardVerdict {
        enforce(
            hasher,
            &self.bytes,
            &self.revoked_token_value,
            &HostEnvironment {
                mac: self.host,
                now,
            },
            &self.ctx,
        )
    }
}

/// Moves a byte-identical copy one hop to `to_env` and runs the guard
/// there. The source copy is untouched; the destination copy is returned
/// only if the guard let it survive.
pub fn simulate_exfiltration(
    hasher: &ProtocolHasher,
    source: &ProtectedCopy,
    from_env: &HostEnvironment,
    to_env: &HostEnvironment,
) -> Result<(Option<ProtectedCopy>, GuardVerdict)> {
    if from_env.mac == to_env.mac {
        return Err(Error::InvalidArgument(
            "exfiltration needs distinct source and destination hosts".into(),
        ));
    }
    let copy = ProtectedCopy {
        host: to_env.mac,
        ..source.clone()
    };
    let verdict = copy.enforce(hasher, to_env.now);
    let survivor = (!verdict.destroys()).then_some(copy);
    Ok((survivor, verdict))
}
