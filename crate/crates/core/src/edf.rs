//! Reading and writing of EEG recordings in the European Data Format.
//!
//! Plain EDF and continuous EDF+ (`EDF+C`) are accepted. Samples are
//! converted to physical units on read; callers never see digital values.
//! [`EdfReader`] gives record-by-record access so a multi-hour recording
//! does not have to be resident in memory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveTime, Timelike};
use thiserror::Error;

/// Size of the fixed part of an EDF header and of each per-signal block.
pub const HEADER_BLOCK: usize = 256;

#[derive(Debug, Error)]
pub enum EdfError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("truncated file: needed {expected} bytes at offset {offset}, only {found} available")]
    Truncated { offset: u64, expected: u64, found: u64 },
    #[error("invalid {field} at offset {offset}: {value:?} ({reason})")]
    Field {
        field: &'static str,
        offset: u64,
        value: String,
        reason: String,
    },
    #[error("header_bytes field is {found} but {num_signals} signals require {expected}")]
    HeaderBytes {
        found: u64,
        expected: u64,
        num_signals: usize,
    },
    #[error("discontinuous EDF+ (EDF+D) recordings are not supported")]
    Discontinuous,
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, EdfError>;

/// Per-signal part of the EDF header.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    /// A signal using the full 16-bit digital range.
    pub fn new(
        label: impl Into<String>,
        physical_dimension: impl Into<String>,
        physical_min: f64,
        physical_max: f64,
        samples_per_record: usize,
    ) -> Self {
        Self {
            label: label.into(),
            transducer: String::new(),
            physical_dimension: physical_dimension.into(),
            physical_min,
            physical_max,
            digital_min: i16::MIN as i32,
            digital_max: i16::MAX as i32,
            prefiltering: String::new(),
            samples_per_record,
            reserved: String::new(),
        }
    }

    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn offset(&self) -> f64 {
        self.physical_max - self.gain() * self.digital_max as f64
    }

    /// Physical size of one digital step.
    pub fn quantization_step(&self) -> f64 {
        self.gain().abs()
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        digital as f64 * self.gain() + self.offset()
    }

    pub fn to_digital(&self, physical: f64) -> i16 {
        let lo = self.digital_min.min(self.digital_max) as f64;
        let hi = self.digital_min.max(self.digital_max) as f64;
        let d = ((physical - self.offset()) / self.gain()).round();
        if d.is_nan() {
            return 0;
        }
        d.clamp(lo, hi) as i16
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: NaiveDate,
    pub start_time: NaiveTime,
    pub header_bytes: usize,
    /// `None` while the record count is unknown (`-1` on disk).
    pub num_records: Option<u64>,
    pub record_duration_s: f64,
    /// The 44-byte reserved field; `EDF+C` marks continuous EDF+.
    pub reserved: String,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    pub fn new(
        patient_id: impl Into<String>,
        recording_id: impl Into<String>,
        start: chrono::NaiveDateTime,
        record_duration_s: f64,
        num_records: u64,
        signals: Vec<SignalHeader>,
    ) -> Self {
        Self {
            version: "0".to_string(),
            patient_id: patient_id.into(),
            recording_id: recording_id.into(),
            start_date: start.date(),
            start_time: start.time(),
            header_bytes: HEADER_BLOCK * (1 + signals.len()),
            num_records: Some(num_records),
            record_duration_s,
            reserved: String::new(),
            signals,
        }
    }

    pub fn num_signals(&self) -> usize {
        self.signals.len()
    }

    /// Bytes occupied by one data record.
    pub fn record_bytes(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }

    pub fn sampling_rate(&self, signal: usize) -> f64 {
        self.signals[signal].samples_per_record as f64 / self.record_duration_s
    }
}

/// Total duration covered by the data records.
pub fn recording_duration(header: &EdfHeader) -> Result<f64> {
    match header.num_records {
        Some(n) => Ok(n as f64 * header.record_duration_s),
        None => Err(EdfError::Contract(
            "number of data records is unresolved".into(),
        )),
    }
}

/// Channel samples in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    pub channels: Vec<String>,
    pub fs: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    pub duration_s: f64,
}

impl SignalMatrix {
    /// Builds a matrix where every channel shares `fs`.
    pub fn uniform(channels: Vec<String>, fs: f64, samples: Vec<Vec<f64>>) -> Self {
        let n = samples.first().map_or(0, Vec::len);
        let fs_all = vec![fs; channels.len()];
        Self {
            channels,
            fs: fs_all,
            samples,
            duration_s: n as f64 / fs,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples in the first channel.
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The shared sampling rate, if all channels agree.
    pub fn common_fs(&self) -> Option<f64> {
        let first = *self.fs.first()?;
        self.fs
            .iter()
            .all(|&f| (f - first).abs() <= 1e-9 * first.abs())
            .then_some(first)
    }
}

fn decode_text(bytes: &[u8]) -> String {
    bytes
        .iter()
        .map(|&b| {
            if (0x20..=0x7e).contains(&b) {
                b as char
            } else {
                '?'
            }
        })
        .collect()
}

struct FieldCursor<'a> {
    buf: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> FieldCursor<'a> {
    fn new(buf: &'a [u8], base: u64) -> Self {
        Self { buf, pos: 0, base }
    }

    fn take(&mut self, width: usize) -> (u64, String) {
        let offset = self.base + self.pos as u64;
        let text = decode_text(&self.buf[self.pos..self.pos + width]);
        self.pos += width;
        (offset, text)
    }

    fn text(&mut self, width: usize) -> String {
        self.take(width).1.trim_end().to_string()
    }

    fn parse<T: std::str::FromStr>(&mut self, width: usize, field: &'static str) -> Result<(u64, T)>
    where
        T::Err: std::fmt::Display,
    {
        let (offset, raw) = self.take(width);
        let trimmed = raw.trim();
        trimmed
            .parse::<T>()
            .map(|v| (offset, v))
            .map_err(|e| EdfError::Field {
                field,
                offset,
                value: raw.clone(),
                reason: e.to_string(),
            })
    }
}

fn field_err(field: &'static str, offset: u64, value: impl Into<String>, reason: &str) -> EdfError {
    EdfError::Field {
        field,
        offset,
        value: value.into(),
        reason: reason.to_string(),
    }
}

fn parse_date(offset: u64, raw: &str) -> Result<NaiveDate> {
    let bad = || field_err("start_date", offset, raw, "expected dd.mm.yy");
    let parts: Vec<&str> = raw.trim().split('.').collect();
    if parts.len() != 3 || parts.iter().any(|p| p.len() != 2) {
        return Err(bad());
    }
    let nums: Vec<u32> = parts
        .iter()
        .map(|p| p.parse::<u32>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    // EDF clipping date: yy >= 85 is 19yy, otherwise 20yy.
    let year = if nums[2] >= 85 { 1900 + nums[2] } else { 2000 + nums[2] };
    NaiveDate::from_ymd_opt(year as i32, nums[1], nums[0]).ok_or_else(bad)
}

fn parse_time(offset: u64, raw: &str) -> Result<NaiveTime> {
    let bad = || field_err("start_time", offset, raw, "expected hh.mm.ss");
    let parts: Vec<&str> = raw.trim().split('.').collect();
    if parts.len() != 3 || parts.iter().any(|p| p.len() != 2) {
        return Err(bad());
    }
    let nums: Vec<u32> = parts
        .iter()
        .map(|p| p.parse::<u32>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    NaiveTime::from_hms_opt(nums[0], nums[1], nums[2]).ok_or_else(bad)
}

fn read_block<R: Read>(reader: &mut R, offset: u64, len: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    let mut filled = 0;
    while filled < len {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(EdfError::Truncated {
                    offset,
                    expected: len as u64,
                    found: filled as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(buf)
}

/// Decodes a header from the start of `reader`. `file_len` is used to
/// resolve an unknown record count and to detect truncated data.
fn decode_header<R: Read>(reader: &mut R, file_len: u64) -> Result<EdfHeader> {
    let fixed = read_block(reader, 0, HEADER_BLOCK)?;
    let mut c = FieldCursor::new(&fixed, 0);

    let (voff, version) = c.take(8);
    if version.trim() != "0" {
        return Err(field_err("version", voff, version, "expected \"0\""));
    }
    let patient_id = c.text(80);
    let recording_id = c.text(80);
    let (doff, date_raw) = c.take(8);
    let start_date = parse_date(doff, &date_raw)?;
    let (toff, time_raw) = c.take(8);
    let start_time = parse_time(toff, &time_raw)?;
    let (hoff, header_bytes) = c.parse::<u64>(8, "header_bytes")?;
    let reserved = c.text(44);
    let (noff, num_records_raw) = c.parse::<i64>(8, "num_records")?;
    let (roff, record_duration_s) = c.parse::<f64>(8, "record_duration")?;
    let (soff, num_signals) = c.parse::<usize>(4, "num_signals")?;

    if reserved.starts_with("EDF+D") {
        return Err(EdfError::Discontinuous);
    }
    if !(record_duration_s.is_finite() && record_duration_s > 0.0) {
        return Err(field_err(
            "record_duration",
            roff,
            record_duration_s.to_string(),
            "must be positive",
        ));
    }
    if num_signals == 0 {
        return Err(field_err("num_signals", soff, "0", "at least one signal required"));
    }
    if num_records_raw < -1 {
        return Err(field_err(
            "num_records",
            noff,
            num_records_raw.to_string(),
            "must be -1 or non-negative",
        ));
    }
    let expected = (HEADER_BLOCK as u64) * (1 + num_signals as u64);
    if header_bytes != expected {
        return Err(EdfError::HeaderBytes {
            found: header_bytes,
            expected,
            num_signals,
        });
    }
    let _ = hoff;
    if file_len < expected {
        return Err(EdfError::Truncated {
            offset: HEADER_BLOCK as u64,
            expected: expected - HEADER_BLOCK as u64,
            found: file_len.saturating_sub(HEADER_BLOCK as u64),
        });
    }

    let sig_block = read_block(reader, HEADER_BLOCK as u64, HEADER_BLOCK * num_signals)?;
    let mut c = FieldCursor::new(&sig_block, HEADER_BLOCK as u64);
    let ns = num_signals;
    let labels: Vec<String> = (0..ns).map(|_| c.text(16)).collect();
    let transducers: Vec<String> = (0..ns).map(|_| c.text(80)).collect();
    let dims: Vec<String> = (0..ns).map(|_| c.text(8)).collect();
    let pmins = (0..ns)
        .map(|_| c.parse::<f64>(8, "physical_min"))
        .collect::<Result<Vec<_>>>()?;
    let pmaxs = (0..ns)
        .map(|_| c.parse::<f64>(8, "physical_max"))
        .collect::<Result<Vec<_>>>()?;
    let dmins = (0..ns)
        .map(|_| c.parse::<i32>(8, "digital_min"))
        .collect::<Result<Vec<_>>>()?;
    let dmaxs = (0..ns)
        .map(|_| c.parse::<i32>(8, "digital_max"))
        .collect::<Result<Vec<_>>>()?;
    let prefilters: Vec<String> = (0..ns).map(|_| c.text(80)).collect();
    let sprs = (0..ns)
        .map(|_| c.parse::<usize>(8, "samples_per_record"))
        .collect::<Result<Vec<_>>>()?;
    let sig_reserved: Vec<String> = (0..ns).map(|_| c.text(32)).collect();

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let (pmin_off, pmin) = pmins[i];
        let (_, pmax) = pmaxs[i];
        let (dmin_off, dmin) = dmins[i];
        let (dmax_off, dmax) = dmaxs[i];
        let (spr_off, spr) = sprs[i];
        if !pmin.is_finite() || !pmax.is_finite() || pmin == pmax {
            return Err(field_err(
                "physical_min",
                pmin_off,
                format!("{pmin}..{pmax}"),
                "physical range must be finite and non-empty",
            ));
        }
        let i16_range = i16::MIN as i32..=i16::MAX as i32;
        if !i16_range.contains(&dmin) {
            return Err(field_err("digital_min", dmin_off, dmin.to_string(), "outside 16-bit range"));
        }
        if !i16_range.contains(&dmax) {
            return Err(field_err("digital_max", dmax_off, dmax.to_string(), "outside 16-bit range"));
        }
        if dmin == dmax {
            return Err(field_err(
                "digital_max",
                dmax_off,
                dmax.to_string(),
                "digital range must be non-empty",
            ));
        }
        if spr == 0 {
            return Err(field_err("samples_per_record", spr_off, "0", "must be positive"));
        }
        signals.push(SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: pmin,
            physical_max: pmax,
            digital_min: dmin,
            digital_max: dmax,
            prefiltering: prefilters[i].clone(),
            samples_per_record: spr,
            reserved: sig_reserved[i].clone(),
        });
    }

    let record_bytes = signals
        .iter()
        .try_fold(0u64, |acc, s| acc.checked_add(2 * s.samples_per_record as u64))
        .ok_or_else(|| field_err("samples_per_record", HEADER_BLOCK as u64, "", "record size overflows"))?;
    let data_len = file_len - expected;
    let num_records = if num_records_raw == -1 {
        let n = data_len / record_bytes;
        if !data_len.is_multiple_of(record_bytes) {
            log::warn!(
                "data section of {data_len} bytes is not a whole number of {record_bytes}-byte records; \
                 truncating to {n} records"
            );
        }
        n
    } else {
        let n = num_records_raw as u64;
        let needed = n.checked_mul(record_bytes).ok_or_else(|| {
            field_err("num_records", noff, n.to_string(), "data size overflows")
        })?;
        if needed > data_len {
            return Err(EdfError::Truncated {
                offset: expected,
                expected: needed,
                found: data_len,
            });
        }
        if needed < data_len {
            log::warn!("{} trailing bytes after the last data record ignored", data_len - needed);
        }
        n
    };

    Ok(EdfHeader {
        version: version.trim_end().to_string(),
        patient_id,
        recording_id,
        start_date,
        start_time,
        header_bytes: header_bytes as usize,
        num_records: Some(num_records),
        record_duration_s,
        reserved,
        signals,
    })
}

/// Sequential, record-at-a-time reader.
#[derive(Debug)]
pub struct EdfReader<R> {
    inner: R,
    header: EdfHeader,
    next_record: u64,
    buf: Vec<u8>,
}

impl EdfReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read + Seek> EdfReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let file_len = inner.seek(SeekFrom::End(0))?;
        inner.seek(SeekFrom::Start(0))?;
        let header = decode_header(&mut inner, file_len)?;
        inner.seek(SeekFrom::Start(header.header_bytes as u64))?;
        Ok(Self {
            inner,
            buf: vec![0u8; header.record_bytes()],
            header,
            next_record: 0,
        })
    }

    pub fn header(&self) -> &EdfHeader {
        &self.header
    }

    pub fn records_remaining(&self) -> u64 {
        self.header.num_records.unwrap_or(0) - self.next_record
    }

    /// Reads up to `max_records` records and returns their samples per
    /// signal, or `None` once the data section is exhausted.
    pub fn read_records(&mut self, max_records: u64) -> Result<Option<Vec<Vec<f64>>>> {
        let n = max_records.min(self.records_remaining());
        if n == 0 {
            return Ok(None);
        }
        let mut out: Vec<Vec<f64>> = self
            .header
            .signals
            .iter()
            .map(|s| Vec::with_capacity(s.samples_per_record * n as usize))
            .collect();
        let record_bytes = self.buf.len() as u64;
        for _ in 0..n {
            let offset = self.header.header_bytes as u64 + self.next_record * record_bytes;
            let block = read_block(&mut self.inner, offset, self.buf.len())?;
            let mut pos = 0;
            for (sig, dst) in self.header.signals.iter().zip(out.iter_mut()) {
                let (gain, off) = (sig.gain(), sig.offset());
                for chunk in block[pos..pos + 2 * sig.samples_per_record].chunks_exact(2) {
                    let d = i16::from_le_bytes([chunk[0], chunk[1]]);
                    dst.push(d as f64 * gain + off);
                }
                pos += 2 * sig.samples_per_record;
            }
            self.next_record += 1;
        }
        Ok(Some(out))
    }

    /// Reads every remaining record.
    pub fn read_to_end(mut self) -> Result<(EdfHeader, SignalMatrix)> {
        let mut samples: Vec<Vec<f64>> = vec![Vec::new(); self.header.num_signals()];
        while let Some(chunk) = self.read_records(64)? {
            for (dst, src) in samples.iter_mut().zip(chunk) {
                dst.extend(src);
            }
        }
        let header = self.header;
        let matrix = SignalMatrix {
            channels: header.signals.iter().map(|s| s.label.clone()).collect(),
            fs: (0..header.num_signals()).map(|i| header.sampling_rate(i)).collect(),
            samples,
            duration_s: recording_duration(&header)?,
        };
        Ok((header, matrix))
    }
}

pub fn read_edf(path: impl AsRef<Path>) -> Result<(EdfHeader, SignalMatrix)> {
    EdfReader::open(path)?.read_to_end()
}

/// Decodes only the header.
pub fn read_edf_header(path: impl AsRef<Path>) -> Result<EdfHeader> {
    Ok(EdfReader::open(path)?.header)
}

fn push_field(out: &mut Vec<u8>, field: &str, value: &str, width: usize) -> Result<()> {
    if !value.bytes().all(|b| (0x20..=0x7e).contains(&b)) {
        return Err(EdfError::Contract(format!(
            "{field} {value:?} contains non-printable or non-ASCII characters"
        )));
    }
    if value.len() > width {
        return Err(EdfError::Contract(format!(
            "{field} {value:?} exceeds {width} characters"
        )));
    }
    out.extend_from_slice(value.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Shortest decimal rendering of `v` fitting in `width` characters.
fn format_number(v: f64, width: usize) -> Option<String> {
    let s = format!("{v}");
    if s.len() <= width {
        return Some(s);
    }
    (0..width).rev().find_map(|prec| {
        let s = format!("{v:.prec$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        (s.len() <= width).then_some(s)
    })
}

/// The value a number reads back as once written to an 8-character
/// header field.
pub fn header_value(v: f64) -> Option<f64> {
    format_number(v, 8).and_then(|s| s.parse().ok())
}

fn push_number(out: &mut Vec<u8>, field: &str, v: f64, width: usize) -> Result<()> {
    let s = format_number(v, width)
        .ok_or_else(|| EdfError::Contract(format!("{field} {v} does not fit in {width} characters")))?;
    push_field(out, field, &s, width)
}

/// Serializes the header exactly as it is written to disk.
pub fn encode_header(header: &EdfHeader) -> Result<Vec<u8>> {
    let ns = header.num_signals();
    if ns == 0 {
        return Err(EdfError::Contract("header has no signals".into()));
    }
    let expected = HEADER_BLOCK * (1 + ns);
    if header.header_bytes != expected {
        return Err(EdfError::Contract(format!(
            "header_bytes {} inconsistent with {ns} signals (expected {expected})",
            header.header_bytes
        )));
    }
    let num_records = header
        .num_records
        .ok_or_else(|| EdfError::Contract("number of data records is unresolved".into()))?;
    let mut out = Vec::with_capacity(expected);
    push_field(&mut out, "version", &header.version, 8)?;
    push_field(&mut out, "patient_id", &header.patient_id, 80)?;
    push_field(&mut out, "recording_id", &header.recording_id, 80)?;
    let d = header.start_date;
    if !(1985..=2084).contains(&d.year()) {
        return Err(EdfError::Contract(format!(
            "start date {d} outside the EDF range 1985-2084"
        )));
    }
    let date = format!("{:02}.{:02}.{:02}", d.day(), d.month(), d.year() % 100);
    push_field(&mut out, "start_date", &date, 8)?;
    let t = header.start_time;
    let time = format!("{:02}.{:02}.{:02}", t.hour(), t.minute(), t.second());
    push_field(&mut out, "start_time", &time, 8)?;
    push_field(&mut out, "header_bytes", &expected.to_string(), 8)?;
    push_field(&mut out, "reserved", &header.reserved, 44)?;
    push_field(&mut out, "num_records", &num_records.to_string(), 8)?;
    push_number(&mut out, "record_duration", header.record_duration_s, 8)?;
    push_field(&mut out, "num_signals", &ns.to_string(), 4)?;

    let sigs = &header.signals;
    for s in sigs {
        push_field(&mut out, "label", &s.label, 16)?;
    }
    for s in sigs {
        push_field(&mut out, "transducer", &s.transducer, 80)?;
    }
    for s in sigs {
        push_field(&mut out, "physical_dimension", &s.physical_dimension, 8)?;
    }
    for s in sigs {
        push_number(&mut out, "physical_min", s.physical_min, 8)?;
    }
    for s in sigs {
        push_number(&mut out, "physical_max", s.physical_max, 8)?;
    }
    for s in sigs {
        push_field(&mut out, "digital_min", &s.digital_min.to_string(), 8)?;
    }
    for s in sigs {
        push_field(&mut out, "digital_max", &s.digital_max.to_string(), 8)?;
    }
    for s in sigs {
        push_field(&mut out, "prefiltering", &s.prefiltering, 80)?;
    }
    for s in sigs {
        push_field(&mut out, "samples_per_record", &s.samples_per_record.to_string(), 8)?;
    }
    for s in sigs {
        push_field(&mut out, "signal reserved", &s.reserved, 32)?;
    }
    debug_assert_eq!(out.len(), expected);
    Ok(out)
}

fn check_consistent(header: &EdfHeader, signals: &SignalMatrix) -> Result<u64> {
    if signals.channels.is_empty() || header.signals.is_empty() {
        return Err(EdfError::Contract("no signals to write".into()));
    }
    if header.num_signals() != signals.num_channels() || signals.samples.len() != signals.num_channels() {
        return Err(EdfError::Contract(format!(
            "header declares {} signals but matrix has {} channels",
            header.num_signals(),
            signals.num_channels()
        )));
    }
    let n = header
        .num_records
        .ok_or_else(|| EdfError::Contract("number of data records is unresolved".into()))?;
    for (sig, data) in header.signals.iter().zip(&signals.samples) {
        let want = sig.samples_per_record as u64 * n;
        if data.len() as u64 != want {
            return Err(EdfError::Contract(format!(
                "signal {:?} has {} samples, header implies {want}",
                sig.label,
                data.len()
            )));
        }
    }
    Ok(n)
}

/// Writes `signals` using the layout described by `header`.
pub fn write_edf_to<W: Write>(header: &EdfHeader, signals: &SignalMatrix, out: W) -> Result<()> {
    let num_records = check_consistent(header, signals)?;
    let mut w = BufWriter::new(out);
    w.write_all(&encode_header(header)?)?;
    let mut record = Vec::with_capacity(header.record_bytes());
    for r in 0..num_records as usize {
        record.clear();
        for (sig, data) in header.signals.iter().zip(&signals.samples) {
            let spr = sig.samples_per_record;
            for &x in &data[r * spr..(r + 1) * spr] {
                record.extend_from_slice(&sig.to_digital(x).to_le_bytes());
            }
        }
        w.write_all(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edf(header: &EdfHeader, signals: &SignalMatrix, path: impl AsRef<Path>) -> Result<()> {
    check_consistent(header, signals)?;
    encode_header(header)?;
    write_edf_to(header, signals, File::create(path)?)
}
