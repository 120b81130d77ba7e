//! C ABI over the holorelay depth codec, annotation state and session
//! simulator.
//!
//! Every object is an opaque handle created by a `*_new` function and
//! released by the matching `*_free`. Functions return an [`HrStatus`]; on
//! anything other than `HR_STATUS_OK` the thread's last error message is
//! available from [`hr_last_error_message`]. Byte buffers produced by the
//! library are returned as [`HrBuffer`] and released with [`hr_buffer_free`].
//!
//! No function unwinds across the boundary: a panic is caught and reported
//! as `HR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use holorelay::annotation::{AnnotationError, AnnotationState, ApplyOutcome};
use holorelay::depth_codec::{decode, encode, CodecError, CodecState, DepthCodecConfig};
use holorelay::frame::{CameraIntrinsics, DepthFrame, SyntheticSceneConfig, SyntheticSource};
use holorelay::session::{Simulation, SimulationConfig, SimulationReport};
use holorelay::wire::{deserialize, serialize, Message, NetworkProfile, WireMessage};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    /// Bytes are not a well-formed wire message of the expected type.
    Wire = 4,
    /// Depth encode or decode failed for a reason other than desync.
    Codec = 5,
    /// The delta does not apply to the decoder's reference; request a keyframe.
    Desync = 6,
    /// The annotation op was rejected (duplicate or out of protocol).
    Annotation = 7,
    Simulation = 8,
    Panic = 9,
}

/// A byte buffer owned by the library.
#[repr(C)]
pub struct HrBuffer {
    pub data: *mut u8,
    pub len: usize,
}

impl HrBuffer {
    fn from_vec(bytes: Vec<u8>) -> Self {
        let boxed = bytes.into_boxed_slice();
        let len = boxed.len();
        Self {
            data: Box::into_raw(boxed).cast::<u8>(),
            len,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: HrStatus, msg: impl Into<String>) -> HrStatus {
    set_error(msg);
    status
}

/// Runs `f`, clearing the last error first and turning panics into a status.
fn guard(f: impl FnOnce() -> HrStatus) -> HrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(HrStatus::Panic, format!("panic: {what}"))
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(HrStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

fn codec_status(e: &CodecError) -> HrStatus {
    match e {
        CodecError::Desync { .. } | CodecError::Stale { .. } => HrStatus::Desync,
        CodecError::Config(_) => HrStatus::InvalidArgument,
        _ => HrStatus::Codec,
    }
}

/// The message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn hr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a buffer returned by the library. Safe to call on an empty buffer.
///
/// # Safety
/// `buffer` must be NULL or point to a buffer filled by this library that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn hr_buffer_free(buffer: *mut HrBuffer) {
    if buffer.is_null() {
        return;
    }
    let b = &mut *buffer;
    if !b.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
    }
    b.data = ptr::null_mut();
    b.len = 0;
}

// ---------------------------------------------------------------------------
// Depth encoder

/// Encoder state: configuration plus the reconstructed reference.
pub struct HrDepthEncoder {
    config: DepthCodecConfig,
    state: CodecState,
}

/// Camera model of the frames passed to the encoder.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HrIntrinsics {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: u16,
    pub height: u16,
}

/// Creates an encoder. Pass 0 for any argument to take its default
/// (tile 16, threshold 10 mm, keyframe every 30 frames); a threshold of 0
/// must therefore be requested through `exact`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn hr_depth_encoder_new(
    tile_size: u8,
    threshold_mm: u16,
    keyframe_interval: u32,
    exact: bool,
    out: *mut *mut HrDepthEncoder,
) -> HrStatus {
    guard(|| {
        non_null!(out);
        let d = DepthCodecConfig::default();
        let config = DepthCodecConfig {
            tile_size: if tile_size == 0 { d.tile_size } else { tile_size },
            change_threshold_mm: if exact { 0 } else if threshold_mm == 0 { d.change_threshold_mm } else { threshold_mm },
            keyframe_interval: if keyframe_interval == 0 { d.keyframe_interval } else { keyframe_interval },
        };
        if let Err(e) = config.validate() {
            return fail(HrStatus::InvalidArgument, e.to_string());
        }
        *out = Box::into_raw(Box::new(HrDepthEncoder {
            config,
            state: CodecState::new(),
        }));
        HrStatus::Ok
    })
}

/// Encodes one depth frame (`width * height` row-major millimeters, 0 =
/// invalid) into a serialized wire message: a keyframe or a tile delta.
///
/// # Safety
/// `encoder` must come from [`hr_depth_encoder_new`]; `depth` must point to
/// `width * height` values; `out` must be writable. The buffer written to
/// `out` must be released with [`hr_buffer_free`].
#[no_mangle]
pub unsafe extern "C" fn hr_depth_encoder_encode(
    encoder: *mut HrDepthEncoder,
    frame_id: u32,
    capture_ts_us: u64,
    intrinsics: HrIntrinsics,
    depth: *const u16,
    out: *mut HrBuffer,
) -> HrStatus {
    guard(|| {
        non_null!(encoder, depth, out);
        let enc = &mut *encoder;
        let k = match CameraIntrinsics::new(
            intrinsics.fx,
            intrinsics.fy,
            intrinsics.cx,
            intrinsics.cy,
            intrinsics.width,
            intrinsics.height,
        ) {
            Ok(k) => k,
            Err(e) => return fail(HrStatus::InvalidArgument, e.to_string()),
        };
        let n = usize::from(intrinsics.width) * usize::from(intrinsics.height);
        let pixels = std::slice::from_raw_parts(depth, n).to_vec();
        let frame = match DepthFrame::new(frame_id, capture_ts_us, k, pixels) {
            Ok(f) => f,
            Err(e) => return fail(HrStatus::InvalidArgument, e.to_string()),
        };
        match encode(&mut enc.state, &frame, &enc.config) {
            Ok(msg) => {
                *out = HrBuffer::from_vec(serialize(&WireMessage::new(Message::from(msg))));
                HrStatus::Ok
            }
            Err(e) => fail(codec_status(&e), e.to_string()),
        }
    })
}

/// Makes the next encoded frame a keyframe.
///
/// # Safety
/// `encoder` must come from [`hr_depth_encoder_new`].
#[no_mangle]
pub unsafe extern "C" fn hr_depth_encoder_force_keyframe(encoder: *mut HrDepthEncoder) -> HrStatus {
    guard(|| {
        non_null!(encoder);
        (*encoder).state = CodecState::new();
        HrStatus::Ok
    })
}

/// # Safety
/// `encoder` must be NULL or come from [`hr_depth_encoder_new`] and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_depth_encoder_free(encoder: *mut HrDepthEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

// ---------------------------------------------------------------------------
// Depth decoder

/// Decoder state plus the last frame it reconstructed.
pub struct HrDepthDecoder {
    state: CodecState,
    last: Option<DepthFrame>,
}

/// Identity of a decoded frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HrFrameInfo {
    pub frame_id: u32,
    pub capture_ts_us: u64,
    pub width: u16,
    pub height: u16,
    pub keyframe: bool,
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn hr_depth_decoder_new(out: *mut *mut HrDepthDecoder) -> HrStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(HrDepthDecoder {
            state: CodecState::new(),
            last: None,
        }));
        HrStatus::Ok
    })
}

/// Decodes one serialized depth message. On success `info` describes the
/// reconstructed frame, whose pixels [`hr_depth_decoder_copy_depth`] copies
/// out. `HR_STATUS_DESYNC` means a keyframe is needed before deltas apply.
///
/// # Safety
/// `decoder` must come from [`hr_depth_decoder_new`]; `bytes` must point to
/// `len` readable bytes; `info` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn hr_depth_decoder_decode(
    decoder: *mut HrDepthDecoder,
    bytes: *const u8,
    len: usize,
    info: *mut HrFrameInfo,
) -> HrStatus {
    guard(|| {
        non_null!(decoder, bytes);
        let dec = &mut *decoder;
        let msg = match deserialize(std::slice::from_raw_parts(bytes, len)) {
            Ok(m) => m,
            Err(e) => return fail(HrStatus::Wire, e.to_string()),
        };
        let Some(depth) = msg.into_depth() else {
            return fail(HrStatus::Wire, "not a depth message");
        };
        let keyframe = depth.is_keyframe();
        match decode(&mut dec.state, &depth) {
            Ok(frame) => {
                if !info.is_null() {
                    *info = HrFrameInfo {
                        frame_id: frame.frame_id,
                        capture_ts_us: frame.capture_ts_us,
                        width: frame.width(),
                        height: frame.height(),
                        keyframe,
                    };
                }
                dec.last = Some(frame);
                HrStatus::Ok
            }
            Err(e) => fail(codec_status(&e), e.to_string()),
        }
    })
}

/// Copies the last decoded frame into `out`, which holds `capacity` values.
///
/// # Safety
/// `decoder` must come from [`hr_depth_decoder_new`]; `out` must point to
/// `capacity` writable values.
#[no_mangle]
pub unsafe extern "C" fn hr_depth_decoder_copy_depth(
    decoder: *const HrDepthDecoder,
    out: *mut u16,
    capacity: usize,
) -> HrStatus {
    guard(|| {
        non_null!(decoder, out);
        let Some(frame) = &(*decoder).last else {
            return fail(HrStatus::InvalidArgument, "nothing decoded yet");
        };
        if capacity < frame.depth.len() {
            return fail(
                HrStatus::BufferTooSmall,
                format!("frame has {} pixels, buffer holds {capacity}", frame.depth.len()),
            );
        }
        ptr::copy_nonoverlapping(frame.depth.as_ptr(), out, frame.depth.len());
        HrStatus::Ok
    })
}

/// # Safety
/// `decoder` must be NULL or come from [`hr_depth_decoder_new`] and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_depth_decoder_free(decoder: *mut HrDepthDecoder) {
    if !decoder.is_null() {
        drop(Box::from_raw(decoder));
    }
}

// ---------------------------------------------------------------------------
// Annotations

/// The shared annotation state one peer holds.
pub struct HrAnnotations {
    state: AnnotationState,
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn hr_annotations_new(out: *mut *mut HrAnnotations) -> HrStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(HrAnnotations {
            state: AnnotationState::new(),
        }));
        HrStatus::Ok
    })
}

/// Applies one serialized AnnotationOp wire message. `superseded` (may be
/// NULL) is set when the op targeted a stroke already erased or cleared.
///
/// # Safety
/// `annotations` must come from [`hr_annotations_new`]; `bytes` must point to
/// `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn hr_annotations_apply(
    annotations: *mut HrAnnotations,
    bytes: *const u8,
    len: usize,
    superseded: *mut bool,
) -> HrStatus {
    guard(|| {
        non_null!(annotations, bytes);
        let msg = match deserialize(std::slice::from_raw_parts(bytes, len)) {
            Ok(m) => m,
            Err(e) => return fail(HrStatus::Wire, e.to_string()),
        };
        let Message::AnnotationOp(op) = msg.body else {
            return fail(HrStatus::Wire, "not an annotation op");
        };
        match (*annotations).state.apply(&op) {
            Ok(outcome) => {
                if !superseded.is_null() {
                    *superseded = outcome == ApplyOutcome::Superseded;
                }
                HrStatus::Ok
            }
            Err(e @ (AnnotationError::Duplicate { .. } | AnnotationError::Protocol { .. })) => {
                fail(HrStatus::Annotation, e.to_string())
            }
            Err(e) => fail(HrStatus::Wire, e.to_string()),
        }
    })
}

/// Number of live strokes, or 0 for a NULL handle.
///
/// # Safety
/// `annotations` must be NULL or come from [`hr_annotations_new`].
#[no_mangle]
pub unsafe extern "C" fn hr_annotations_stroke_count(annotations: *const HrAnnotations) -> usize {
    if annotations.is_null() {
        return 0;
    }
    (*annotations).state.strokes().len()
}

/// Writes the state as UTF-8 JSON (not NUL-terminated) into `out`.
///
/// # Safety
/// `annotations` must come from [`hr_annotations_new`]; `out` must be
/// writable. Release the buffer with [`hr_buffer_free`].
#[no_mangle]
pub unsafe extern "C" fn hr_annotations_to_json(annotations: *const HrAnnotations, out: *mut HrBuffer) -> HrStatus {
    guard(|| {
        non_null!(annotations, out);
        *out = HrBuffer::from_vec((*annotations).state.to_json().to_string().into_bytes());
        HrStatus::Ok
    })
}

/// # Safety
/// `annotations` must be NULL or come from [`hr_annotations_new`] and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_annotations_free(annotations: *mut HrAnnotations) {
    if !annotations.is_null() {
        drop(Box::from_raw(annotations));
    }
}

// ---------------------------------------------------------------------------
// Simulation

/// Parameters of a simulated session over the synthetic scene.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HrSimulationParams {
    pub width: u16,
    pub height: u16,
    pub duration_us: u64,
    pub latency_ms: f64,
    pub jitter_ms: f64,
    pub loss_probability: f64,
    /// 0 for an unlimited link.
    pub bandwidth_bps: u64,
    /// 0 for an unbounded media queue.
    pub queue_capacity: u32,
    pub seed: u64,
}

/// Headline numbers of a finished run. Latencies are NaN when no frame
/// arrived.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HrSimulationReport {
    pub end_us: u64,
    pub frames_captured: u64,
    pub reconstructed_frames: u64,
    pub queue_drops: u64,
    pub network_losses: u64,
    pub keyframes_sent: u64,
    pub keyframe_requests: u64,
    pub operator_bytes_tx: u64,
    pub e2e_p50_ms: f64,
    pub e2e_p95_ms: f64,
    pub annotations_converged: bool,
}

impl From<&SimulationReport> for HrSimulationReport {
    fn from(r: &SimulationReport) -> Self {
        Self {
            end_us: r.end_us,
            frames_captured: r.frames_captured,
            reconstructed_frames: r.reconstructed_frames,
            queue_drops: r.queue_drops,
            network_losses: r.network_losses,
            keyframes_sent: r.keyframes_sent,
            keyframe_requests: r.keyframe_requests,
            operator_bytes_tx: r.operator.bytes_tx,
            e2e_p50_ms: r.e2e_p50_ms.unwrap_or(f64::NAN),
            e2e_p95_ms: r.e2e_p95_ms.unwrap_or(f64::NAN),
            annotations_converged: r.annotations_converged,
        }
    }
}

/// A configured session; runs once.
pub struct HrSimulation {
    sim: Simulation<SyntheticSource>,
    report: Option<SimulationReport>,
}

/// Defaults for [`HrSimulationParams`]: 640x576, 10 s, 80 ms ± 20 ms, 0.5 %
/// loss, 20 Mbps, two-slot queue, seed 7.
#[no_mangle]
pub extern "C" fn hr_simulation_params_default() -> HrSimulationParams {
    let p = NetworkProfile::default();
    let scene = SyntheticSceneConfig::default();
    let config = SimulationConfig::default();
    HrSimulationParams {
        width: scene.width,
        height: scene.height,
        duration_us: config.duration_us,
        latency_ms: p.base_latency_us as f64 / 1000.0,
        jitter_ms: p.jitter_us as f64 / 1000.0,
        loss_probability: p.loss_probability,
        bandwidth_bps: p.bandwidth_bps.unwrap_or(0),
        queue_capacity: config.queue_capacity.map_or(0, |c| c as u32),
        seed: 7,
    }
}

/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hr_simulation_new(params: *const HrSimulationParams, out: *mut *mut HrSimulation) -> HrStatus {
    guard(|| {
        non_null!(params, out);
        let p = *params;
        let profile = match NetworkProfile::from_ms(
            p.latency_ms,
            p.jitter_ms,
            p.loss_probability,
            (p.bandwidth_bps != 0).then_some(p.bandwidth_bps),
        ) {
            Ok(profile) => profile.with_seed(p.seed),
            Err(e) => return fail(HrStatus::InvalidArgument, e.to_string()),
        };
        let source = match SyntheticSource::new(SyntheticSceneConfig {
            width: p.width,
            height: p.height,
            ..SyntheticSceneConfig::default()
        }) {
            Ok(s) => s,
            Err(e) => return fail(HrStatus::InvalidArgument, e.to_string()),
        };
        let config = SimulationConfig {
            duration_us: p.duration_us,
            profile,
            queue_capacity: (p.queue_capacity != 0).then_some(p.queue_capacity as usize),
            ..SimulationConfig::default()
        };
        match Simulation::new(config, source) {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(HrSimulation { sim, report: None }));
                HrStatus::Ok
            }
            Err(e) => fail(HrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Runs the session to completion and fills `report` (may be NULL). A
/// second call returns the first run's report without running again.
///
/// # Safety
/// `sim` must come from [`hr_simulation_new`]; `report` must be NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hr_simulation_run(sim: *mut HrSimulation, report: *mut HrSimulationReport) -> HrStatus {
    guard(|| {
        non_null!(sim);
        let s = &mut *sim;
        if s.report.is_none() {
            match s.sim.run() {
                Ok(r) => s.report = Some(r),
                Err(e) => return fail(HrStatus::Simulation, e.to_string()),
            }
        }
        if !report.is_null() {
            *report = HrSimulationReport::from(s.report.as_ref().expect("set above"));
        }
        HrStatus::Ok
    })
}

/// The per-second stats of a finished run as JSON lines.
///
/// # Safety
/// `sim` must come from [`hr_simulation_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_simulation_stats_jsonl(sim: *const HrSimulation, out: *mut HrBuffer) -> HrStatus {
    guard(|| {
        non_null!(sim, out);
        let Some(report) = &(*sim).report else {
            return fail(HrStatus::InvalidArgument, "simulation has not run");
        };
        *out = HrBuffer::from_vec(report.stats_jsonl().into_bytes());
        HrStatus::Ok
    })
}

/// # Safety
/// `sim` must be NULL or come from [`hr_simulation_new`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_simulation_free(sim: *mut HrSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}
