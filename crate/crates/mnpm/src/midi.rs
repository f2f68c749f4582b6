//! Standard MIDI File parsing and writing, and extraction of timed note
//! intervals from note-on/note-off events.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("not a standard MIDI file: {0}")]
    Format(String),
    #[error("unsupported SMF format {0} (only 0 and 1)")]
    UnsupportedFormat(u16),
    #[error("SMPTE division is not supported (metrical timing only)")]
    UnsupportedDivision,
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("malformed variable-length quantity")]
    MalformedVlq,
    #[error("out of range: {0}")]
    Range(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One track event: delta ticks since the previous event plus payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEvent {
    pub delta: u32,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    NoteOff { channel: u8, note: u8, velocity: u8 },
    NoteOn { channel: u8, note: u8, velocity: u8 },
    PolyPressure { channel: u8, note: u8, value: u8 },
    Controller { channel: u8, controller: u8, value: u8 },
    ProgramChange { channel: u8, program: u8 },
    ChannelPressure { channel: u8, value: u8 },
    PitchBend { channel: u8, value: u16 },
    Tempo(u32),
    EndOfTrack,
    /// Any other meta event, preserved opaquely.
    Meta { meta_type: u8, data: Vec<u8> },
    /// F0/F7 system-exclusive payload, preserved opaquely.
    SysEx(Vec<u8>),
}

/// A parsed SMF: format 0 or 1, metrical division, decoded tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct MidiFile {
    pub format: u16,
    /// Ticks per quarter note (> 0).
    pub division: u16,
    pub tracks: Vec<Vec<TrackEvent>>,
}

/// Ordered (tick, microseconds-per-quarter) pairs converting ticks to
/// seconds; always starts at tick 0 (default 500000 us/quarter).
#[derive(Debug, Clone)]
pub struct TempoMap {
    // (tick, us_per_quarter, seconds at that tick)
    entries: Vec<(u64, u32, f64)>,
    division: u16,
}

pub const DEFAULT_TEMPO: u32 = 500_000;

impl TempoMap {
    /// Builds the map from every tempo event in the file, merged across
    /// tracks in timeline order.
    pub fn from_midi(midi: &MidiFile) -> TempoMap {
        let mut changes: Vec<(u64, u32)> = Vec::new();
        for track in &midi.tracks {
            let mut tick = 0u64;
            for ev in track {
                tick += ev.delta as u64;
                if let EventKind::Tempo(us) = ev.kind {
                    changes.push((tick, us));
                }
            }
        }
        changes.sort_by_key(|&(tick, _)| tick);
        let mut entries: Vec<(u64, u32, f64)> = Vec::new();
        if changes.first().is_none_or(|&(tick, _)| tick != 0) {
            entries.push((0, DEFAULT_TEMPO, 0.0));
        }
        for (tick, us) in changes {
            let seconds = match entries.last() {
                Some(&(prev_tick, prev_us, prev_secs)) => {
                    prev_secs
                        + (tick - prev_tick) as f64 / midi.division as f64 * prev_us as f64 / 1e6
                }
                None => 0.0,
            };
            // a later change at the same tick replaces the earlier one
            if let Some(last) = entries.last_mut() {
                if last.0 == tick {
                    last.1 = us;
                    continue;
                }
            }
            entries.push((tick, us, seconds));
        }
        TempoMap {
            entries,
            division: midi.division,
        }
    }

    /// Piecewise conversion of an absolute tick to seconds.
    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        let idx = match self.entries.binary_search_by_key(&tick, |e| e.0) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let (entry_tick, us, secs) = self.entries[idx];
        secs + (tick - entry_tick) as f64 / self.division as f64 * us as f64 / 1e6
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.entries.iter().map(|&(t, us, _)| (t, us))
    }
}

/// One sounding note: MIDI note number with onset/offset in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteInterval {
    pub note: u8,
    pub onset: f64,
    pub offset: f64,
}

/// The note-interval vector extracted from (or written to) a MIDI file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoteIntervalSet {
    intervals: Vec<NoteInterval>,
}

impl NoteIntervalSet {
    pub fn new(intervals: Vec<NoteInterval>) -> Result<Self, MidiError> {
        for iv in &intervals {
            if iv.note > 127 {
                return Err(MidiError::Range(format!("note {} > 127", iv.note)));
            }
            if !(iv.onset >= 0.0 && iv.onset < iv.offset) {
                return Err(MidiError::Range(format!(
                    "interval must satisfy 0 <= onset < offset, got [{}, {})",
                    iv.onset, iv.offset
                )));
            }
        }
        Ok(NoteIntervalSet { intervals })
    }

    pub fn empty() -> Self {
        NoteIntervalSet::default()
    }

    pub fn intervals(&self) -> &[NoteInterval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NoteInterval> {
        self.intervals.iter()
    }

    /// Latest offset, or 0 for an empty set.
    pub fn max_offset(&self) -> f64 {
        self.intervals.iter().map(|iv| iv.offset).fold(0.0, f64::max)
    }

    /// CSV export: `note,onset_seconds,offset_seconds`.
    pub fn export_csv(&self, path: &Path) -> Result<(), MidiError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "note,onset_seconds,offset_seconds")?;
        for iv in &self.intervals {
            writeln!(w, "{},{:.6},{:.6}", iv.note, iv.onset, iv.offset)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Decodes a MIDI variable-length quantity: 7 data bits per byte,
/// big-endian, continuation bit 0x80, at most 4 bytes.
pub fn parse_vlq(bytes: &[u8]) -> Result<(u32, usize), MidiError> {
    if bytes.is_empty() {
        return Err(MidiError::Truncated("empty input for VLQ".into()));
    }
    let mut value: u32 = 0;
    for (i, &b) in bytes.iter().take(4).enumerate() {
        value = (value << 7) | (b & 0x7F) as u32;
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    if bytes.len() < 4 {
        return Err(MidiError::Truncated("VLQ runs past end of data".into()));
    }
    Err(MidiError::MalformedVlq)
}

/// Encodes a value (< 2^28) as a variable-length quantity.
pub fn encode_vlq(value: u32) -> Result<Vec<u8>, MidiError> {
    if value > 0x0FFF_FFFF {
        return Err(MidiError::Range(format!("VLQ value {} >= 2^28", value)));
    }
    let mut out = vec![(value & 0x7F) as u8];
    let mut rest = value >> 7;
    while rest > 0 {
        out.push(0x80 | (rest & 0x7F) as u8);
        rest >>= 7;
    }
    out.reverse();
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.pos + n > self.bytes.len() {
            return Err(MidiError::Truncated(format!(
                "need {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn byte(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let (v, used) = parse_vlq(&self.bytes[self.pos..])?;
        self.pos += used;
        Ok(v)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Reads an SMF from a file; see [`parse_smf`].
pub fn read_smf(path: &Path) -> Result<MidiFile, MidiError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_smf(&bytes)
}

/// Parses a Standard MIDI File (formats 0 and 1, metrical division),
/// including running status; unknown meta and sysex events are kept as
/// opaque payloads.
pub fn parse_smf(bytes: &[u8]) -> Result<MidiFile, MidiError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != b"MThd" {
        return Err(MidiError::Format(format!(
            "bad header magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let header_len = u32::from_be_bytes(cur.take(4)?.try_into().unwrap()) as usize;
    if header_len < 6 {
        return Err(MidiError::Format(format!(
            "header length {} < 6",
            header_len
        )));
    }
    let header = cur.take(header_len)?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]);
    let division_raw = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    if division_raw & 0x8000 != 0 {
        return Err(MidiError::UnsupportedDivision);
    }
    if division_raw == 0 {
        return Err(MidiError::Format("division must be > 0".into()));
    }

    let mut tracks = Vec::with_capacity(ntracks as usize);
    for t in 0..ntracks {
        let magic = cur.take(4)?;
        if magic != b"MTrk" {
            return Err(MidiError::Format(format!(
                "track {}: bad chunk magic {:?}",
                t,
                String::from_utf8_lossy(magic)
            )));
        }
        let len = u32::from_be_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let body = cur.take(len)?;
        tracks.push(parse_track(body, t)?);
    }
    Ok(MidiFile {
        format,
        division: division_raw,
        tracks,
    })
}

fn data_byte(cur: &mut Cursor, what: &str) -> Result<u8, MidiError> {
    let b = cur.byte()?;
    if b & 0x80 != 0 {
        return Err(MidiError::Format(format!(
            "{} byte 0x{:02X} has the status bit set",
            what, b
        )));
    }
    Ok(b)
}

fn parse_track(body: &[u8], track_idx: u16) -> Result<Vec<TrackEvent>, MidiError> {
    let mut cur = Cursor {
        bytes: body,
        pos: 0,
    };
    let mut events = Vec::new();
    let mut running_status: Option<u8> = None;
    loop {
        if cur.remaining() == 0 {
            return Err(MidiError::Format(format!(
                "track {} does not end with an end-of-track event",
                track_idx
            )));
        }
        let delta = cur.vlq()?;
        let first = cur.peek().ok_or_else(|| {
            MidiError::Truncated(format!("track {}: event cut off after delta", track_idx))
        })?;
        let status = if first & 0x80 != 0 {
            cur.byte()?
        } else {
            running_status.ok_or_else(|| {
                MidiError::Format(format!(
                    "track {}: data byte 0x{:02X} with no running status",
                    track_idx, first
                ))
            })?
        };

        let kind = match status {
            0xFF => {
                running_status = None;
                let meta_type = cur.byte()?;
                let len = cur.vlq()? as usize;
                let data = cur.take(len)?;
                match meta_type {
                    0x2F => EventKind::EndOfTrack,
                    0x51 => {
                        if data.len() != 3 {
                            return Err(MidiError::Format(format!(
                                "tempo meta event with length {}",
                                data.len()
                            )));
                        }
                        let us =
                            ((data[0] as u32) << 16) | ((data[1] as u32) << 8) | data[2] as u32;
                        if us == 0 {
                            return Err(MidiError::Format("tempo of 0 us/quarter".into()));
                        }
                        EventKind::Tempo(us)
                    }
                    _ => EventKind::Meta {
                        meta_type,
                        data: data.to_vec(),
                    },
                }
            }
            0xF0 | 0xF7 => {
                running_status = None;
                let len = cur.vlq()? as usize;
                EventKind::SysEx(cur.take(len)?.to_vec())
            }
            0x80..=0xEF => {
                running_status = Some(status);
                let channel = status & 0x0F;
                match status & 0xF0 {
                    0x80 => EventKind::NoteOff {
                        channel,
                        note: data_byte(&mut cur, "note")?,
                        velocity: data_byte(&mut cur, "velocity")?,
                    },
                    0x90 => EventKind::NoteOn {
                        channel,
                        note: data_byte(&mut cur, "note")?,
                        velocity: data_byte(&mut cur, "velocity")?,
                    },
                    0xA0 => EventKind::PolyPressure {
                        channel,
                        note: data_byte(&mut cur, "note")?,
                        value: data_byte(&mut cur, "pressure")?,
                    },
                    0xB0 => EventKind::Controller {
                        channel,
                        controller: data_byte(&mut cur, "controller")?,
                        value: data_byte(&mut cur, "value")?,
                    },
                    0xC0 => EventKind::ProgramChange {
                        channel,
                        program: data_byte(&mut cur, "program")?,
                    },
                    0xD0 => EventKind::ChannelPressure {
                        channel,
                        value: data_byte(&mut cur, "pressure")?,
                    },
                    0xE0 => {
                        let lsb = data_byte(&mut cur, "bend lsb")? as u16;
                        let msb = data_byte(&mut cur, "bend msb")? as u16;
                        EventKind::PitchBend {
                            channel,
                            value: (msb << 7) | lsb,
                        }
                    }
                    _ => unreachable!(),
                }
            }
            other => {
                return Err(MidiError::Format(format!(
                    "track {}: status byte 0x{:02X} is not valid in a file",
                    track_idx, other
                )));
            }
        };

        let is_end = kind == EventKind::EndOfTrack;
        events.push(TrackEvent { delta, kind });
        if is_end {
            if cur.remaining() != 0 {
                return Err(MidiError::Format(format!(
                    "track {}: {} bytes after end-of-track",
                    track_idx,
                    cur.remaining()
                )));
            }
            return Ok(events);
        }
    }
}

impl MidiFile {
    /// Extracts note intervals: note-on (velocity > 0) opens, matching
    /// note-off or note-on-velocity-0 closes. Events are merged across
    /// tracks into one timeline, ticks converted to seconds through the
    /// tempo map. Returns the set and the count of note-ons left open at
    /// end of file (closed at the final event time).
    pub fn extract_intervals(&self) -> (NoteIntervalSet, usize) {
        self.extract_intervals_filtered(&[])
    }

    /// Like [`extract_intervals`](Self::extract_intervals) but ignoring
    /// events on the given channels.
    pub fn extract_intervals_filtered(&self, exclude_channels: &[u8]) -> (NoteIntervalSet, usize) {
        let tempo = TempoMap::from_midi(self);

        // (abs_tick, track, index) timeline across all tracks
        let mut timeline: Vec<(u64, usize, usize)> = Vec::new();
        for (t, track) in self.tracks.iter().enumerate() {
            let mut tick = 0u64;
            for (i, ev) in track.iter().enumerate() {
                tick += ev.delta as u64;
                timeline.push((tick, t, i));
            }
        }
        timeline.sort_by_key(|&(tick, t, i)| (tick, t, i));
        let final_tick = timeline.last().map_or(0, |&(tick, _, _)| tick);

        let mut open: HashMap<(u8, u8), u64> = HashMap::new();
        let mut raw: Vec<(u8, u64, u64)> = Vec::new(); // (note, on_tick, off_tick)
        for &(tick, t, i) in &timeline {
            match self.tracks[t][i].kind {
                EventKind::NoteOn {
                    channel,
                    note,
                    velocity,
                } if velocity > 0 => {
                    if exclude_channels.contains(&channel) {
                        continue;
                    }
                    // retrigger: an already-open note closes here and reopens
                    if let Some(onset) = open.insert((channel, note), tick) {
                        raw.push((note, onset, tick));
                    }
                }
                EventKind::NoteOn { channel, note, .. }
                | EventKind::NoteOff { channel, note, .. } => {
                    if exclude_channels.contains(&channel) {
                        continue;
                    }
                    if let Some(onset) = open.remove(&(channel, note)) {
                        raw.push((note, onset, tick));
                    }
                }
                _ => {}
            }
        }
        let unmatched = open.len();
        for ((_, note), onset) in open {
            raw.push((note, onset, final_tick));
        }

        let mut intervals: Vec<NoteInterval> = raw
            .into_iter()
            .filter(|&(_, on, off)| off > on)
            .map(|(note, on, off)| NoteInterval {
                note,
                onset: tempo.tick_to_seconds(on),
                offset: tempo.tick_to_seconds(off),
            })
            .collect();
        intervals.sort_by(|a, b| {
            a.onset
                .partial_cmp(&b.onset)
                .unwrap()
                .then(a.note.cmp(&b.note))
                .then(a.offset.partial_cmp(&b.offset).unwrap())
        });
        (
            NoteIntervalSet { intervals },
            unmatched,
        )
    }
}

/// Encodes intervals as a format-0 SMF at a fixed tempo. Seconds map to
/// ticks by rounding; zero-length quantized notes are stretched to one
/// tick so no interval is silently lost.
pub fn encode_smf(
    intervals: &NoteIntervalSet,
    division: u16,
    tempo_us: u32,
) -> Result<Vec<u8>, MidiError> {
    if division == 0 || division & 0x8000 != 0 {
        return Err(MidiError::Range(format!(
            "division {} must be metrical and > 0",
            division
        )));
    }
    if tempo_us == 0 {
        return Err(MidiError::Range("tempo must be > 0".into()));
    }

    let to_tick = |secs: f64| -> u64 {
        (secs * 1e6 / tempo_us as f64 * division as f64).round() as u64
    };

    // (tick, order, note, velocity): note-offs sort before note-ons at
    // the same tick so back-to-back repeats of a note survive a reparse
    let mut events: Vec<(u64, u8, u8, u8)> = Vec::new();
    for iv in intervals.iter() {
        if iv.note > 127 {
            return Err(MidiError::Range(format!("note {} > 127", iv.note)));
        }
        let on = to_tick(iv.onset);
        let off = to_tick(iv.offset).max(on + 1);
        events.push((on, 1, iv.note, 64));
        events.push((off, 0, iv.note, 0));
    }
    events.sort_by_key(|&(tick, order, note, _)| (tick, order, note));

    let mut track: Vec<u8> = Vec::new();
    // tempo meta at tick 0
    track.extend_from_slice(&[0x00, 0xFF, 0x51, 0x03]);
    track.extend_from_slice(&tempo_us.to_be_bytes()[1..]);
    let mut last_tick = 0u64;
    for (tick, order, note, velocity) in events {
        let delta = (tick - last_tick) as u32;
        last_tick = tick;
        track.extend_from_slice(&encode_vlq(delta)?);
        let status = if order == 1 { 0x90 } else { 0x80 };
        track.extend_from_slice(&[status, note, velocity]);
    }
    track.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]); // end of track

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes()); // format 0
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&division.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

/// Writes [`encode_smf`] output to a file.
pub fn write_smf(
    intervals: &NoteIntervalSet,
    division: u16,
    tempo_us: u32,
    path: &Path,
) -> Result<(), MidiError> {
    let bytes = encode_smf(intervals, division, tempo_us)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
