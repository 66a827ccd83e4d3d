//! Timestamped detection events and sorted event streams.
//!
//! All timestamps are integer picoseconds since the start of a run. Electron
//! positions live in the TEM sample plane, in micrometres.

use std::ops::Deref;

use thiserror::Error;

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

/// Something carrying a detection timestamp.
pub trait Timestamped {
    /// Arrival time in picoseconds since run start.
    fn t(&self) -> u64;
}

/// A detected electron: arrival time plus sample-plane position (µm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectronEvent {
    pub t: u64,
    pub x: f32,
    pub y: f32,
}

/// A detected photon. The bucket detector carries no position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhotonEvent {
    pub t: u64,
}

impl Timestamped for ElectronEvent {
    fn t(&self) -> u64 {
        self.t
    }
}

impl Timestamped for PhotonEvent {
    fn t(&self) -> u64 {
        self.t
    }
}

/// Rectangular detector field of view in the sample plane (µm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOfView {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl FieldOfView {
    pub fn contains(&self, x: f32, y: f32) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Stream metadata.
///
/// `duration_ps` and `fov` are carried by the on-disk format; the nominal rate
/// and seed are provenance that lives in run manifests instead.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StreamHeader {
    pub duration_ps: u64,
    pub fov: Option<FieldOfView>,
    pub nominal_rate_hz: Option<f64>,
    pub seed: Option<u64>,
}

impl StreamHeader {
    pub fn new(duration_ps: u64) -> Self {
        Self {
            duration_ps,
            ..Self::default()
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 / PS_PER_S
    }
}

/// A header plus a sequence of events. Not necessarily valid; see
/// [`validate_stream`].
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream<E> {
    pub header: StreamHeader,
    pub events: Vec<E>,
}

impl<E> EventStream<E> {
    pub fn new(header: StreamHeader, events: Vec<E>) -> Self {
        Self { header, events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Why a stream failed validation. Indices point at the first offending event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StreamError {
    #[error("event {0} is earlier than its predecessor")]
    OutOfOrder(usize),
    #[error("event {0} has a negative timestamp")]
    NegativeTime(usize),
    #[error("event {0} lies beyond the run duration")]
    BeyondDuration(usize),
    #[error("event {0} has a non-finite position")]
    NonFinitePosition(usize),
    #[error("event {0} lies outside the declared field of view")]
    OutsideFieldOfView(usize),
}

/// Per-event checks beyond time ordering.
pub trait CheckEvent {
    fn check(&self, index: usize, header: &StreamHeader) -> Result<(), StreamError>;
}

impl CheckEvent for PhotonEvent {
    fn check(&self, _: usize, _: &StreamHeader) -> Result<(), StreamError> {
        Ok(())
    }
}

impl CheckEvent for ElectronEvent {
    fn check(&self, index: usize, header: &StreamHeader) -> Result<(), StreamError> {
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(StreamError::NonFinitePosition(index));
        }
        match header.fov {
            Some(fov) if !fov.contains(self.x, self.y) => {
                Err(StreamError::OutsideFieldOfView(index))
            }
            _ => Ok(()),
        }
    }
}

/// A stream whose invariants (sorted, in range, finite) have been checked.
///
/// The only way to obtain one is [`validate_stream`] (or a producer in this
/// crate that builds valid streams by construction).
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedStream<E>(EventStream<E>);

impl<E> ValidatedStream<E> {
    pub fn into_inner(self) -> EventStream<E> {
        self.0
    }

    /// Wraps a stream already known to be valid. Checked in debug builds.
    pub(crate) fn assume_valid(stream: EventStream<E>) -> Self
    where
        E: Timestamped + CheckEvent,
    {
        debug_assert!(check_stream(&stream).is_ok());
        Self(stream)
    }
}

impl<E> Deref for ValidatedStream<E> {
    type Target = EventStream<E>;

    fn deref(&self) -> &EventStream<E> {
        &self.0
    }
}

fn check_stream<E: Timestamped + CheckEvent>(stream: &EventStream<E>) -> Result<(), StreamError> {
    let mut prev = 0u64;
    for (i, ev) in stream.events.iter().enumerate() {
        let t = ev.t();
        // u64 timestamps cannot be negative; the bit pattern of an i64 < 0
        // read as u64 lands above i64::MAX.
        if t > i64::MAX as u64 {
            return Err(StreamError::NegativeTime(i));
        }
        if i > 0 && t < prev {
            return Err(StreamError::OutOfOrder(i));
        }
        if t > stream.header.duration_ps {
            return Err(StreamError::BeyondDuration(i));
        }
        ev.check(i, &stream.header)?;
        prev = t;
    }
    Ok(())
}

/// Checks sort order and range invariants, tagging the stream valid.
pub fn validate_stream<E: Timestamped + CheckEvent>(
    stream: EventStream<E>,
) -> Result<ValidatedStream<E>, StreamError> {
    check_stream(&stream)?;
    Ok(ValidatedStream(stream))
}

/// Stable sort by timestamp; equal timestamps keep their input order.
pub fn sort_events<E: Timestamped>(header: StreamHeader, mut events: Vec<E>) -> EventStream<E> {
    events.sort_by_key(Timestamped::t);
    EventStream::new(header, events)
}

/// Snap-to-grid for timestamps, with the quantum expressed in sixteenths of
/// a picosecond so that sub-picosecond quanta such as 1562.5 ps stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeQuantum {
    sixteenths_ps: u64,
}

impl TimeQuantum {
    /// One picosecond: no quantisation beyond integer ps.
    pub const PICOSECOND: TimeQuantum = TimeQuantum { sixteenths_ps: 16 };
    /// 25/16 ns, the Timepix3 fine time-of-arrival granularity.
    pub const TIMEPIX3: TimeQuantum = TimeQuantum {
        sixteenths_ps: 25_000,
    };

    /// Returns `None` unless `ps` is a multiple of 1/16 ps and at least 1 ps.
    pub fn from_ps(ps: f64) -> Option<Self> {
        let scaled = ps * 16.0;
        if !scaled.is_finite() || scaled < 16.0 || scaled.fract() != 0.0 || scaled > 1e15 {
            return None;
        }
        Some(Self {
            sixteenths_ps: scaled as u64,
        })
    }

    pub fn as_ps(&self) -> f64 {
        self.sixteenths_ps as f64 / 16.0
    }

    /// Nearest grid point to `t_ps`, floored to integer ps. `None` if negative.
    /// Half a quantum rounded down to whole ps.
    pub fn half_ps(&self) -> i64 {
        (self.sixteenths_ps / 32) as i64
    }

    pub fn quantize(&self, t_ps: f64) -> Option<u64> {
        if !(t_ps >= 0.0) {
            return None;
        }
        let k = (t_ps * 16.0 / self.sixteenths_ps as f64).round() as u128;
        Some((k * self.sixteenths_ps as u128 / 16) as u64)
    }
}

impl Default for TimeQuantum {
    fn default() -> Self {
        Self::TIMEPIX3
    }
}
