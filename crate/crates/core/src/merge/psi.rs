//! Diffie-Hellman private set intersection over Ristretto255.
//!
//! Party `i` sends `H(x)^{k_i}` for its keys, sorted by encoding. The peer
//! raises the received points to its own scalar and returns them in the same
//! order. A key is in the intersection iff its doubly blinded point also
//! appears among the peer's doubly blinded points. Two rounds, one message
//! per party per round, both sides learn the intersection.

use std::collections::HashSet;

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::Sha512;

use crate::mpc::derive_seed;
use crate::runtime::{
    run_protocol, Message, MessageKind, Outgoing, PartyId, PartyMachine, ProtocolError, Step, Transcript,
};

const POINT_BYTES: usize = 32;

fn hash_to_group(key: &str) -> RistrettoPoint {
    RistrettoPoint::hash_from_bytes::<Sha512>(key.as_bytes())
}

fn encode_points(points: &[CompressedRistretto]) -> Vec<u8> {
    points.iter().flat_map(|p| p.to_bytes()).collect()
}

fn decode_points(tag: &str, bytes: &[u8]) -> Result<Vec<RistrettoPoint>, ProtocolError> {
    if !bytes.len().is_multiple_of(POINT_BYTES) {
        return Err(ProtocolError::MalformedPayload {
            tag: tag.into(),
            detail: format!("{} bytes is not a whole number of points", bytes.len()),
        });
    }
    bytes
        .chunks_exact(POINT_BYTES)
        .map(|c| {
            CompressedRistretto::from_slice(c)
                .ok()
                .and_then(|p| p.decompress())
                .ok_or_else(|| ProtocolError::MalformedPayload {
                    tag: tag.into(),
                    detail: "invalid group element".into(),
                })
        })
        .collect()
}

enum Phase {
    Blind,
    Reblind,
    Finish,
}

/// One side of a two-party PSI run.
pub struct PsiParty {
    id: PartyId,
    peer: PartyId,
    secret: Scalar,
    /// Own keys in the order their blinded points were sent.
    order: Vec<String>,
    peer_double: HashSet<[u8; 32]>,
    phase: Phase,
    keys: Vec<String>,
}

impl PsiParty {
    pub fn new(id: PartyId, peer: PartyId, keys: Vec<String>, seed: [u8; 32]) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed);
        Self {
            id,
            peer,
            secret: Scalar::random(&mut rng),
            order: Vec::new(),
            peer_double: HashSet::new(),
            phase: Phase::Blind,
            keys,
        }
    }
}

impl PartyMachine for PsiParty {
    type Output = Vec<String>;

    fn id(&self) -> PartyId {
        self.id
    }

    fn step(&mut self, round: u64, inbox: Vec<Message>) -> Result<Step<Vec<String>>, ProtocolError> {
        match self.phase {
            Phase::Blind => {
                let mut keys: Vec<String> = std::mem::take(&mut self.keys);
                keys.sort();
                keys.dedup();
                let mut blinded: Vec<(CompressedRistretto, String)> = keys
                    .into_iter()
                    .map(|k| ((hash_to_group(&k) * self.secret).compress(), k))
                    .collect();
                blinded.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
                let points: Vec<CompressedRistretto> = blinded.iter().map(|(p, _)| *p).collect();
                self.order = blinded.into_iter().map(|(_, k)| k).collect();
                self.phase = Phase::Reblind;
                Ok(Step::Continue(vec![Outgoing {
                    to: self.peer,
                    round,
                    tag: "psi.blind".into(),
                    kind: MessageKind::Psi,
                    payload: encode_points(&points),
                }]))
            }
            Phase::Reblind => {
                let msg = single(inbox, "psi.blind", self.id)?;
                let theirs = decode_points("psi.blind", &msg.payload)?;
                let doubled: Vec<CompressedRistretto> =
                    theirs.iter().map(|p| (p * self.secret).compress()).collect();
                self.peer_double = doubled.iter().map(|p| p.to_bytes()).collect();
                self.phase = Phase::Finish;
                Ok(Step::Continue(vec![Outgoing {
                    to: self.peer,
                    round,
                    tag: "psi.double".into(),
                    kind: MessageKind::Psi,
                    payload: encode_points(&doubled),
                }]))
            }
            Phase::Finish => {
                let msg = single(inbox, "psi.double", self.id)?;
                if msg.payload.len() != self.order.len() * POINT_BYTES {
                    return Err(ProtocolError::MalformedPayload {
                        tag: "psi.double".into(),
                        detail: "reply length differs from the sent list".into(),
                    });
                }
                let mut out: Vec<String> = msg
                    .payload
                    .chunks_exact(POINT_BYTES)
                    .zip(&self.order)
                    .filter(|(p, _)| self.peer_double.contains(&<[u8; 32]>::try_from(*p).expect("32 bytes")))
                    .map(|(_, k)| k.clone())
                    .collect();
                out.sort();
                Ok(Step::Done(out))
            }
        }
    }
}

fn single(mut inbox: Vec<Message>, tag: &str, to: PartyId) -> Result<Message, ProtocolError> {
    match inbox.len() {
        1 if inbox[0].tag == tag => Ok(inbox.pop().expect("one")),
        1 => Err(ProtocolError::UnexpectedMessage {
            to,
            from: inbox[0].from,
            expected: tag.into(),
            got: inbox[0].tag.clone(),
        }),
        _ => Err(ProtocolError::Deadlock {
            round: 0,
            detail: format!("{to} expected one {tag:?} message, got {}", inbox.len()),
        }),
    }
}

/// Runs PSI between parties `a` and `b`. Returns the sorted intersection
/// (as learned by `a`; both sides agree) and the transcript.
pub fn psi_align(
    a: PartyId,
    keys_a: &[String],
    b: PartyId,
    keys_b: &[String],
    seed: u64,
) -> Result<(Vec<String>, Transcript), ProtocolError> {
    let label = |p: PartyId| format!("psi-{}-{}-{}", a.0, b.0, p.0);
    let pa = PsiParty::new(a, b, keys_a.to_vec(), derive_seed(seed, &label(a)));
    let pb = PsiParty::new(b, a, keys_b.to_vec(), derive_seed(seed, &label(b)));
    // run_protocol expects parties in id order over a network of size
    // max(a, b); relabel to a two-party run and map ids back.
    let (mut outs, t) = run_pair(pa, pb)?;
    let ob = outs.pop().expect("two outputs");
    let oa = outs.pop().expect("two outputs");
    debug_assert_eq!(oa, ob);
    Ok((oa, t))
}

fn run_pair(a: PsiParty, b: PsiParty) -> Result<(Vec<Vec<String>>, Transcript), ProtocolError> {
    let (ia, ib) = (a.id, b.id);
    let mut a = a;
    let mut b = b;
    // Local two-party numbering for the scheduler.
    a.id = PartyId(1);
    a.peer = PartyId(2);
    b.id = PartyId(2);
    b.peer = PartyId(1);
    let (outs, t) = run_protocol(vec![a, b], 4)?;
    Ok((outs, relabel(t, ia, ib)))
}

fn relabel(t: Transcript, a: PartyId, b: PartyId) -> Transcript {
    t.map_parties(|p| if p == PartyId(1) { a } else { b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::assert_no_plaintext_leak;

    fn keys(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn fixture_intersection() {
        let a = keys(&["alice", "bob", "c1", "jim butler"]);
        let b = keys(&["sam", "lee", "jim butler", "c2"]);
        let (common, t) = psi_align(PartyId(1), &a, PartyId(2), &b, 1).unwrap();
        assert_eq!(common, keys(&["jim butler"]));
        assert_eq!(t.party_messages().count(), 4);
        assert_eq!(t.rounds(), 2);
        let secrets: Vec<Vec<u8>> = a.iter().chain(&b).map(|k| k.as_bytes().to_vec()).collect();
        assert!(assert_no_plaintext_leak(&t, &secrets));
    }

    #[test]
    fn disjoint_and_identical() {
        let a = keys(&["x", "y"]);
        let (none, _) = psi_align(PartyId(1), &a, PartyId(2), &keys(&["z"]), 2).unwrap();
        assert!(none.is_empty());
        let (all, _) = psi_align(PartyId(1), &a, PartyId(2), &a, 3).unwrap();
        assert_eq!(all, a);
        let (empty, _) = psi_align(PartyId(1), &[], PartyId(2), &a, 4).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn non_adjacent_party_ids_are_kept() {
        let (c, t) = psi_align(PartyId(1), &keys(&["k"]), PartyId(3), &keys(&["k"]), 5).unwrap();
        assert_eq!(c, keys(&["k"]));
        assert!(t
            .party_messages()
            .all(|m| m.to == PartyId(1) || m.to == PartyId(3)));
    }
}
