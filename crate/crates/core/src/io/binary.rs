//! Little-endian binary formats: event streams (`EPGI`), pair lists (`EPGP`)
//! and simulation ground truth (`EPGT`).
//!
//! Event file layout:
//!
//! ```text
//! magic "EPGI" | version u16 | duration_ps u64 | count u64 | kind u8
//! | fov x_min, y_min, x_max, y_max: 4 × f32 (all NaN when undeclared)
//! | count × record
//! ```
//!
//! A photon record is `t: u64`; an electron record is `t: u64, x: f32, y: f32`.

use std::path::Path;

use super::IoError;
use crate::coincidence::{CoincidenceWindow, Pair, PairList};
use crate::event::{
    validate_stream, CheckEvent, ElectronEvent, EventStream, FieldOfView, PhotonEvent,
    StreamHeader, Timestamped, ValidatedStream,
};
use crate::source::{GroundTruth, PairRecord};

pub const EVENTS_MAGIC: [u8; 4] = *b"EPGI";
pub const PAIRS_MAGIC: [u8; 4] = *b"EPGP";
pub const TRUTH_MAGIC: [u8; 4] = *b"EPGT";
pub const FORMAT_VERSION: u16 = 1;

/// Fixed-size on-disk record for one event type.
pub trait EventRecord: Timestamped + CheckEvent + Sized {
    /// Header `kind` byte.
    const KIND: u8;
    const SIZE: usize;
    fn put(&self, out: &mut Vec<u8>);
    fn get(bytes: &[u8]) -> Self;
}

impl EventRecord for PhotonEvent {
    const KIND: u8 = 0;
    const SIZE: usize = 8;

    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.t.to_le_bytes());
    }

    fn get(b: &[u8]) -> Self {
        PhotonEvent { t: u64_at(b, 0) }
    }
}

impl EventRecord for ElectronEvent {
    const KIND: u8 = 1;
    const SIZE: usize = 16;

    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&self.x.to_le_bytes());
        out.extend_from_slice(&self.y.to_le_bytes());
    }

    fn get(b: &[u8]) -> Self {
        ElectronEvent {
            t: u64_at(b, 0),
            x: f32_at(b, 8),
            y: f32_at(b, 12),
        }
    }
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn i64_at(b: &[u8], at: usize) -> i64 {
    i64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Magic, version and a fixed-size header; returns the header bytes.
fn open(bytes: &[u8], magic: [u8; 4], header_len: usize) -> Result<&[u8], IoError> {
    if bytes.len() < 4 || bytes[..4] != magic {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(IoError::BadMagic(found));
    }
    if bytes.len() < 6 {
        return Err(IoError::TruncatedHeader);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(IoError::VersionUnsupported(version));
    }
    bytes.get(6..6 + header_len).ok_or(IoError::TruncatedHeader)
}

/// Splits the record area into `declared` records of `size` bytes.
fn records(body: &[u8], declared: u64, size: usize) -> Result<std::slice::ChunksExact<'_, u8>, IoError> {
    let whole = (body.len() / size) as u64;
    if whole < declared && !body.len().is_multiple_of(size) {
        return Err(IoError::TruncatedRecord { index: whole });
    }
    if whole != declared || !body.len().is_multiple_of(size) {
        return Err(IoError::CountMismatch {
            declared,
            found: whole,
        });
    }
    Ok(body.chunks_exact(size))
}

const EVENT_HEADER: usize = 8 + 8 + 1 + 16;

pub fn encode_events<E: EventRecord>(stream: &EventStream<E>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + EVENT_HEADER + stream.len() * E::SIZE);
    out.extend_from_slice(&EVENTS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&stream.header.duration_ps.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    out.push(E::KIND);
    let fov = stream.header.fov.map_or([f32::NAN; 4], |f| [f.x_min, f.y_min, f.x_max, f.y_max]);
    for v in fov {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for ev in &stream.events {
        ev.put(&mut out);
    }
    out
}

/// Parses and validates an event file image.
pub fn decode_events<E: EventRecord>(bytes: &[u8]) -> Result<ValidatedStream<E>, IoError> {
    let h = open(bytes, EVENTS_MAGIC, EVENT_HEADER)?;
    let duration_ps = u64_at(h, 0);
    let declared = u64_at(h, 8);
    if h[16] != E::KIND {
        return Err(IoError::WrongKind {
            expected: E::KIND,
            found: h[16],
        });
    }
    let f = [f32_at(h, 17), f32_at(h, 21), f32_at(h, 25), f32_at(h, 29)];
    let fov = (!f.iter().any(|v| v.is_nan())).then_some(FieldOfView {
        x_min: f[0],
        y_min: f[1],
        x_max: f[2],
        y_max: f[3],
    });
    let events = records(&bytes[6 + EVENT_HEADER..], declared, E::SIZE)?
        .map(E::get)
        .collect();
    let header = StreamHeader {
        duration_ps,
        fov,
        ..StreamHeader::default()
    };
    Ok(validate_stream(EventStream::new(header, events))?)
}

pub fn write_events<E: EventRecord>(path: &Path, stream: &EventStream<E>) -> Result<(), IoError> {
    Ok(std::fs::write(path, encode_events(stream))?)
}

pub fn read_events<E: EventRecord>(path: &Path) -> Result<ValidatedStream<E>, IoError> {
    decode_events(&std::fs::read(path)?)
}

// pairs: has_window u8 | offset_ps i64 | half_width_ps u64 | count u64
// record: electron u64 | photon u64 | tau_ps i64
const PAIRS_HEADER: usize = 1 + 8 + 8 + 8;
const PAIR_SIZE: usize = 24;

pub fn encode_pairs(list: &PairList) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + PAIRS_HEADER + list.len() * PAIR_SIZE);
    out.extend_from_slice(&PAIRS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let w = list.window.unwrap_or(CoincidenceWindow {
        offset_ps: 0,
        half_width_ps: 0,
    });
    out.push(list.window.is_some() as u8);
    out.extend_from_slice(&w.offset_ps.to_le_bytes());
    out.extend_from_slice(&w.half_width_ps.to_le_bytes());
    out.extend_from_slice(&(list.len() as u64).to_le_bytes());
    for p in &list.pairs {
        out.extend_from_slice(&p.electron.to_le_bytes());
        out.extend_from_slice(&p.photon.to_le_bytes());
        out.extend_from_slice(&p.tau_ps.to_le_bytes());
    }
    out
}

pub fn decode_pairs(bytes: &[u8]) -> Result<PairList, IoError> {
    let h = open(bytes, PAIRS_MAGIC, PAIRS_HEADER)?;
    let window = match h[0] {
        0 => None,
        1 if u64_at(h, 9) > 0 => Some(CoincidenceWindow::new(i64_at(h, 1), u64_at(h, 9))),
        v => return Err(IoError::malformed("pair list", format!("window flag {v}"))),
    };
    let pairs = records(&bytes[6 + PAIRS_HEADER..], u64_at(h, 17), PAIR_SIZE)?
        .map(|r| Pair {
            electron: u64_at(r, 0),
            photon: u64_at(r, 8),
            tau_ps: i64_at(r, 16),
        })
        .collect();
    Ok(PairList { window, pairs })
}

pub fn write_pairs(path: &Path, list: &PairList) -> Result<(), IoError> {
    Ok(std::fs::write(path, encode_pairs(list))?)
}

pub fn read_pairs(path: &Path) -> Result<PairList, IoError> {
    decode_pairs(&std::fs::read(path)?)
}

// truth: electrons_emitted u64 | background_electrons u64 | dark_counts u64 | count u64
// record: 6 × f64 positions | flags u8 | electron_index u64 | photon_index u64
// (u64::MAX marks an absent index)
const TRUTH_HEADER: usize = 32;
const TRUTH_SIZE: usize = 48 + 1 + 16;

pub fn encode_truth(truth: &GroundTruth) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + TRUTH_HEADER + truth.pairs.len() * TRUTH_SIZE);
    out.extend_from_slice(&TRUTH_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [
        truth.electrons_emitted,
        truth.background_electrons,
        truth.dark_counts,
        truth.pairs.len() as u64,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in &truth.pairs {
        for v in p.electron_um.iter().chain(&p.emission_um).chain(&p.image_um) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(p.transmitted as u8 | (p.photon_detected as u8) << 1 | (p.electron_recorded as u8) << 2);
        for idx in [p.electron_index, p.photon_index] {
            out.extend_from_slice(&idx.unwrap_or(u64::MAX).to_le_bytes());
        }
    }
    out
}

pub fn decode_truth(bytes: &[u8]) -> Result<GroundTruth, IoError> {
    let h = open(bytes, TRUTH_MAGIC, TRUTH_HEADER)?;
    let index = |r: &[u8], at| Some(u64_at(r, at)).filter(|&v| v != u64::MAX);
    let mut pairs = Vec::new();
    for r in records(&bytes[6 + TRUTH_HEADER..], u64_at(h, 24), TRUTH_SIZE)? {
        let flags = r[48];
        if flags > 7 {
            return Err(IoError::malformed("ground truth", format!("flags {flags}")));
        }
        pairs.push(PairRecord {
            electron_um: [f64_at(r, 0), f64_at(r, 8)],
            emission_um: [f64_at(r, 16), f64_at(r, 24)],
            image_um: [f64_at(r, 32), f64_at(r, 40)],
            transmitted: flags & 1 != 0,
            photon_detected: flags & 2 != 0,
            electron_recorded: flags & 4 != 0,
            electron_index: index(r, 49),
            photon_index: index(r, 57),
        });
    }
    Ok(GroundTruth {
        pairs,
        electrons_emitted: u64_at(h, 0),
        background_electrons: u64_at(h, 8),
        dark_counts: u64_at(h, 16),
    })
}

pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<(), IoError> {
    Ok(std::fs::write(path, encode_truth(truth))?)
}

pub fn read_truth(path: &Path) -> Result<GroundTruth, IoError> {
    decode_truth(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::sort_events;
    use crate::rng::{substream_rng, Substream};
    use proptest::prelude::*;
    use rand::Rng;

    fn electrons(n: usize, seed: u64) -> EventStream<ElectronEvent> {
        let mut rng = substream_rng(seed, Substream::Test, 0);
        let events = (0..n)
            .map(|_| ElectronEvent {
                t: rng.random_range(0..1_000_000_000),
                x: rng.random_range(-20.0..20.0),
                y: rng.random_range(-20.0..20.0),
            })
            .collect();
        let header = StreamHeader {
            duration_ps: 1_000_000_000,
            fov: Some(FieldOfView {
                x_min: -20.0,
                y_min: -20.0,
                x_max: 20.0,
                y_max: 20.0,
            }),
            ..StreamHeader::default()
        };
        sort_events(header, events)
    }

    #[test]
    fn hundred_thousand_electrons_round_trip() {
        let s = electrons(100_000, 1);
        let bytes = encode_events(&s);
        assert_eq!(bytes.len(), 6 + EVENT_HEADER + 16 * 100_000);
        let back = decode_events::<ElectronEvent>(&bytes).unwrap();
        assert_eq!(*back, s);
        assert_eq!(encode_events(&back), bytes);
    }

    #[test]
    fn empty_photon_stream_is_a_valid_file() {
        let s = EventStream::<PhotonEvent>::new(StreamHeader::new(5), vec![]);
        let bytes = encode_events(&s);
        assert_eq!(bytes.len(), 6 + EVENT_HEADER);
        assert_eq!(*decode_events::<PhotonEvent>(&bytes).unwrap(), s);
    }

    #[test]
    fn layout_is_pinned() {
        let s = EventStream::new(StreamHeader::new(0x0102), vec![PhotonEvent { t: 7 }]);
        let b = encode_events(&s);
        assert_eq!(&b[..6], b"EPGI\x01\x00");
        assert_eq!(&b[6..14], &0x0102u64.to_le_bytes());
        assert_eq!(&b[14..22], &1u64.to_le_bytes());
        assert_eq!(b[22], 0);
        assert!(f32::from_le_bytes(b[23..27].try_into().unwrap()).is_nan());
        assert_eq!(&b[39..], &7u64.to_le_bytes());
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = encode_events(&electrons(10, 2));
        let cut = bytes.len() - 5;
        assert!(matches!(
            decode_events::<ElectronEvent>(&bytes[..cut]),
            Err(IoError::TruncatedRecord { index: 9 })
        ));
        assert!(matches!(
            decode_events::<ElectronEvent>(&bytes[..bytes.len() - 16]),
            Err(IoError::CountMismatch { declared: 10, found: 9 })
        ));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 16]);
        assert!(matches!(
            decode_events::<ElectronEvent>(&extra),
            Err(IoError::CountMismatch { declared: 10, found: 11 })
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_events::<ElectronEvent>(&magic), Err(IoError::BadMagic(_))));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(
            decode_events::<ElectronEvent>(&version),
            Err(IoError::VersionUnsupported(9))
        ));
        assert!(matches!(
            decode_events::<PhotonEvent>(&bytes),
            Err(IoError::WrongKind { expected: 0, found: 1 })
        ));
        assert!(matches!(
            decode_events::<ElectronEvent>(&bytes[..20]),
            Err(IoError::TruncatedHeader)
        ));
    }

    #[test]
    fn unsorted_payload_fails_validation() {
        let s = EventStream::new(StreamHeader::new(100), vec![PhotonEvent { t: 20 }, PhotonEvent { t: 10 }]);
        assert!(matches!(
            decode_events::<PhotonEvent>(&encode_events(&s)),
            Err(IoError::Invalid(crate::event::StreamError::OutOfOrder(1)))
        ));
    }

    #[test]
    fn truth_round_trips() {
        let truth = GroundTruth {
            pairs: vec![
                PairRecord {
                    electron_um: [1.0, -2.5],
                    emission_um: [1.1, -2.4],
                    image_um: [-20.9, -45.6],
                    transmitted: true,
                    photon_detected: false,
                    electron_recorded: true,
                    electron_index: Some(3),
                    photon_index: None,
                },
                PairRecord {
                    electron_um: [0.0; 2],
                    emission_um: [0.0; 2],
                    image_um: [0.0; 2],
                    transmitted: false,
                    photon_detected: true,
                    electron_recorded: false,
                    electron_index: None,
                    photon_index: Some(0),
                },
            ],
            electrons_emitted: 10,
            background_electrons: 4,
            dark_counts: 2,
        };
        assert_eq!(decode_truth(&encode_truth(&truth)).unwrap(), truth);
    }

    proptest! {
        #[test]
        fn photon_streams_round_trip(mut ts in proptest::collection::vec(0u64..1 << 40, 0..200)) {
            ts.sort_unstable();
            let s = EventStream::new(StreamHeader::new(1 << 40), ts.into_iter().map(|t| PhotonEvent { t }).collect());
            prop_assert_eq!(&*decode_events::<PhotonEvent>(&encode_events(&s)).unwrap(), &s);
        }

        #[test]
        fn pair_lists_round_trip(
            raw in proptest::collection::vec((any::<u64>(), any::<u64>(), any::<i64>()), 0..100),
            window in proptest::option::of((any::<i64>(), 1..u64::MAX)),
        ) {
            let list = PairList {
                window: window.map(|(o, w)| CoincidenceWindow::new(o, w)),
                pairs: raw.into_iter().map(|(electron, photon, tau_ps)| Pair { electron, photon, tau_ps }).collect(),
            };
            prop_assert_eq!(decode_pairs(&encode_pairs(&list)).unwrap(), list);
        }
    }
}
