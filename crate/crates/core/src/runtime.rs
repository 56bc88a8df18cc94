//! Deterministic in-process simulation of n parties.
//!
//! All cross-party data moves as [`Message`] values through a [`Network`],
//! which keeps per-channel FIFO queues, a round barrier, and an append-only
//! [`Transcript`]. Two drivers sit on top of it: [`run_protocol`] schedules
//! independent [`PartyMachine`]s round by round, and the lockstep MPC engine in
//! [`crate::mpc`] computes every party's local step itself and exchanges data
//! only through `send`/`recv`.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One-based party index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(pub usize);

impl PartyId {
    /// Party from a zero-based position.
    pub fn from_index(i: usize) -> Self {
        PartyId(i + 1)
    }

    /// Zero-based position.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn all(n: usize) -> impl Iterator<Item = PartyId> {
        (1..=n).map(PartyId)
    }
}

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Party(PartyId),
    Dealer,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Party(p) => write!(f, "{p}"),
            Endpoint::Dealer => f.write_str("dealer"),
        }
    }
}

/// What a message's payload is, for leakage accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    /// Fresh random share of a private input, sent point to point.
    Share,
    /// Dealer preprocessing material.
    Dealer,
    /// Opened Beaver or truncation mask (uniform given the secret).
    BeaverMask,
    /// Opened masked difference of a comparison; only its sign is used.
    Comparison,
    /// Locally known divisor (a degree count) announced as public.
    PublicDivisor,
    /// Blinded group elements of the PSI exchange.
    Psi,
    /// Share of a final result being reconstructed.
    Output,
    /// Diagnostic opening of an intermediate value; never allowed in audits.
    Debug,
}

/// Categories of values that become public during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Disclosure {
    PsiIntersection,
    ComparisonBits,
    BeaverMasks,
    PublicDivisors,
    FinalOutputs,
    Unclassified,
}

impl Disclosure {
    /// Everything that may legitimately become public.
    pub const ALLOWED: [Disclosure; 5] = [
        Disclosure::PsiIntersection,
        Disclosure::ComparisonBits,
        Disclosure::BeaverMasks,
        Disclosure::PublicDivisors,
        Disclosure::FinalOutputs,
    ];
}

impl MessageKind {
    /// `None` for point-to-point material that stays private to its receiver.
    pub fn disclosure(self) -> Option<Disclosure> {
        match self {
            MessageKind::Share | MessageKind::Dealer => None,
            MessageKind::BeaverMask => Some(Disclosure::BeaverMasks),
            MessageKind::Comparison => Some(Disclosure::ComparisonBits),
            MessageKind::PublicDivisor => Some(Disclosure::PublicDivisors),
            MessageKind::Psi => Some(Disclosure::PsiIntersection),
            MessageKind::Output => Some(Disclosure::FinalOutputs),
            MessageKind::Debug => Some(Disclosure::Unclassified),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub from: Endpoint,
    pub to: PartyId,
    pub round: u64,
    pub tag: String,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn is_dealer(&self) -> bool {
        self.from == Endpoint::Dealer
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("{party} sent a message for round {sent} during round {current}")]
    RoundDesync {
        party: PartyId,
        sent: u64,
        current: u64,
    },
    #[error("deadlock in round {round}: {detail}")]
    Deadlock { round: u64, detail: String },
    #[error("{to} expected {expected:?} from {from}, got {got:?}")]
    UnexpectedMessage {
        to: PartyId,
        from: Endpoint,
        expected: String,
        got: String,
    },
    #[error("malformed payload for {tag}: {detail}")]
    MalformedPayload { tag: String, detail: String },
    #[error("unknown party {0}")]
    UnknownParty(PartyId),
}

/// Append-only record of all traffic in a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    messages: Vec<Message>,
    rounds: u64,
}

/// One line of the JSON-lines dump.
#[derive(Serialize)]
struct DumpLine<'a> {
    round: u64,
    from: String,
    to: String,
    tag: &'a str,
    kind: MessageKind,
    dealer: bool,
    payload: String,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn party_messages(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(|m| !m.is_dealer())
    }

    pub fn dealer_messages(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(|m| m.is_dealer())
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Number of completed communication rounds.
    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Bytes sent by each party (dealer traffic excluded).
    pub fn bytes_sent(&self) -> BTreeMap<PartyId, usize> {
        let mut out = BTreeMap::new();
        for m in self.party_messages() {
            if let Endpoint::Party(p) = m.from {
                *out.entry(p).or_default() += m.payload.len();
            }
        }
        out
    }

    /// Party-to-party message count per sender.
    pub fn messages_sent(&self) -> BTreeMap<PartyId, usize> {
        let mut out = BTreeMap::new();
        for m in self.party_messages() {
            if let Endpoint::Party(p) = m.from {
                *out.entry(p).or_default() += 1;
            }
        }
        out
    }

    pub fn count_kind(&self, kind: MessageKind) -> usize {
        self.messages.iter().filter(|m| m.kind == kind).count()
    }

    pub fn count_tag(&self, tag: &str) -> usize {
        self.messages.iter().filter(|m| m.tag == tag).count()
    }

    pub(crate) fn push(&mut self, m: Message) {
        self.messages.push(m);
    }

    /// Appends another transcript, renumbering its rounds after ours.
    pub fn append(&mut self, other: Transcript) {
        let offset = self.rounds;
        for mut m in other.messages {
            m.round += offset;
            self.messages.push(m);
        }
        self.rounds += other.rounds;
    }

    /// Renames parties, e.g. to embed a two-party sub-run into a larger one.
    pub fn map_parties(mut self, f: impl Fn(PartyId) -> PartyId) -> Transcript {
        for m in &mut self.messages {
            if let Endpoint::Party(p) = m.from {
                m.from = Endpoint::Party(f(p));
            }
            m.to = f(m.to);
        }
        self
    }

    /// Set of disclosure categories present.
    pub fn disclosures(&self) -> BTreeMap<Disclosure, usize> {
        let mut out = BTreeMap::new();
        for m in self.party_messages() {
            if let Some(d) = m.kind.disclosure() {
                *out.entry(d).or_default() += 1;
            }
        }
        out
    }

    /// Messages whose disclosure category is not in `allowed`.
    pub fn disallowed<'a>(&'a self, allowed: &'a [Disclosure]) -> Vec<&'a Message> {
        self.party_messages()
            .filter(|m| m.kind.disclosure().is_some_and(|d| !allowed.contains(&d)))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for m in &self.messages {
            let line = DumpLine {
                round: m.round,
                from: m.from.to_string(),
                to: m.to.to_string(),
                tag: &m.tag,
                kind: m.kind,
                dealer: m.is_dealer(),
                payload: hex::encode(&m.payload),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON output is UTF-8")
    }
}

/// True iff no payload contains any of the byte patterns.
pub fn assert_no_plaintext_leak(t: &Transcript, secrets: &[Vec<u8>]) -> bool {
    let patterns: Vec<&[u8]> = secrets.iter().filter(|s| !s.is_empty()).map(Vec::as_slice).collect();
    if patterns.is_empty() {
        return true;
    }
    let ac = aho_corasick::AhoCorasick::new(&patterns).expect("pattern set fits the automaton");
    t.messages().iter().all(|m| !ac.is_match(&m.payload))
}

/// Reliable FIFO channels between n parties with a round barrier.
#[derive(Debug)]
pub struct Network {
    n: usize,
    round: u64,
    pending: Vec<Message>,
    channels: HashMap<(Endpoint, PartyId), VecDeque<Message>>,
    transcript: Transcript,
}

impl Network {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            round: 0,
            pending: Vec::new(),
            channels: HashMap::new(),
            transcript: Transcript::new(),
        }
    }

    pub fn parties(&self) -> usize {
        self.n
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn take_transcript(&mut self) -> Transcript {
        std::mem::take(&mut self.transcript)
    }

    fn check(&self, p: PartyId) -> Result<(), ProtocolError> {
        if p.0 == 0 || p.0 > self.n {
            Err(ProtocolError::UnknownParty(p))
        } else {
            Ok(())
        }
    }

    /// Queues a message for delivery at the next barrier.
    pub fn send(
        &mut self,
        from: PartyId,
        to: PartyId,
        tag: &str,
        kind: MessageKind,
        payload: Vec<u8>,
    ) -> Result<(), ProtocolError> {
        self.check(from)?;
        self.check(to)?;
        let m = Message {
            from: Endpoint::Party(from),
            to,
            round: self.round,
            tag: tag.to_string(),
            kind,
            payload,
        };
        self.transcript.push(m.clone());
        self.pending.push(m);
        Ok(())
    }

    /// Records dealer material handed to a party. Dealer traffic is
    /// preprocessing and does not wait for a barrier.
    pub fn dealer_send(&mut self, to: PartyId, tag: &str, payload: Vec<u8>) {
        self.transcript.push(Message {
            from: Endpoint::Dealer,
            to,
            round: self.round,
            tag: tag.to_string(),
            kind: MessageKind::Dealer,
            payload,
        });
    }

    /// Ends the current round, delivering everything sent in it.
    pub fn barrier(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        for m in self.pending.drain(..) {
            self.channels.entry((m.from, m.to)).or_default().push_back(m);
        }
        self.round += 1;
        self.transcript.rounds = self.round;
    }

    /// Pops the next delivered message on the `from -> to` channel.
    pub fn recv(&mut self, to: PartyId, from: PartyId, tag: &str) -> Result<Vec<u8>, ProtocolError> {
        let key = (Endpoint::Party(from), to);
        let queue = self.channels.get_mut(&key);
        match queue.and_then(|q| q.pop_front()) {
            Some(m) if m.tag == tag => Ok(m.payload),
            Some(m) => Err(ProtocolError::UnexpectedMessage {
                to,
                from: m.from,
                expected: tag.to_string(),
                got: m.tag,
            }),
            None => Err(ProtocolError::Deadlock {
                round: self.round,
                detail: format!("{to} waiting on {from} for {tag:?}"),
            }),
        }
    }

    /// Drains everything delivered to `to`, in sender order then FIFO.
    pub fn drain_inbox(&mut self, to: PartyId) -> Vec<Message> {
        let mut keys: Vec<_> = self
            .channels
            .keys()
            .filter(|(_, t)| *t == to)
            .copied()
            .collect();
        keys.sort();
        let mut out = Vec::new();
        for k in keys {
            if let Some(q) = self.channels.get_mut(&k) {
                out.extend(q.drain(..));
            }
        }
        out
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Appends the transcript of a standalone run and advances the round
    /// counter past it.
    pub fn absorb(&mut self, t: Transcript) {
        self.transcript.append(t);
        self.round = self.transcript.rounds;
    }
}

/// Message produced by a [`PartyMachine`] step.
#[derive(Debug, Clone)]
pub struct Outgoing {
    pub to: PartyId,
    pub round: u64,
    pub tag: String,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

#[derive(Debug)]
pub enum Step<O> {
    /// Keep running; these messages go out this round.
    Continue(Vec<Outgoing>),
    Done(O),
}

/// A party as a state machine driven once per round.
pub trait PartyMachine {
    type Output;

    fn id(&self) -> PartyId;

    /// `inbox` holds everything delivered at the end of the previous round.
    fn step(&mut self, round: u64, inbox: Vec<Message>) -> Result<Step<Self::Output>, ProtocolError>;
}

/// Runs machines to completion under a per-round barrier.
pub fn run_protocol<M: PartyMachine>(
    mut parties: Vec<M>,
    max_rounds: u64,
) -> Result<(Vec<M::Output>, Transcript), ProtocolError> {
    let n = parties.len();
    let mut net = Network::new(n);
    let mut outputs: Vec<Option<M::Output>> = (0..n).map(|_| None).collect();
    let mut round = 0u64;
    loop {
        let mut sent_any = false;
        let mut delivered_any = false;
        for (slot, party) in parties.iter_mut().enumerate() {
            if outputs[slot].is_some() {
                continue;
            }
            let id = party.id();
            let inbox = net.drain_inbox(id);
            delivered_any |= !inbox.is_empty();
            match party.step(round, inbox)? {
                Step::Continue(msgs) => {
                    for m in msgs {
                        if m.round != round {
                            return Err(ProtocolError::RoundDesync {
                                party: id,
                                sent: m.round,
                                current: round,
                            });
                        }
                        net.send(id, m.to, &m.tag, m.kind, m.payload)?;
                        sent_any = true;
                    }
                }
                Step::Done(o) => outputs[slot] = Some(o),
            }
        }
        if outputs.iter().all(Option::is_some) {
            break;
        }
        if !sent_any && !delivered_any {
            return Err(ProtocolError::Deadlock {
                round,
                detail: "every running party is blocked with nothing in flight".into(),
            });
        }
        net.barrier();
        round += 1;
        if round > max_rounds {
            return Err(ProtocolError::Deadlock {
                round,
                detail: format!("exceeded {max_rounds} rounds"),
            });
        }
    }
    let outputs = outputs.into_iter().map(|o| o.expect("checked above")).collect();
    Ok((outputs, net.take_transcript()))
}
