//! Live recognition pipeline: frame source → joint formatter → packer →
//! recognizer → label sink, each on its own thread, connected by bounded
//! queues.

mod queue;

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use queue::{BoundedQueue, Overflow, QueueStats};

use crate::error::{Error, Result};
use crate::ingest::RecordingReader;
use crate::model::{predict, predict_batch, Checkpoint};
use crate::pipeline::Pipeline;
use crate::skeleton::{remap_frame, JointMap, JointSetId, SkeletonFrame};
use crate::windowing::{SlidingWindower, WindowTensor};

pub const FRAME_QUEUE_CAPACITY: usize = 64;
pub const WINDOW_QUEUE_CAPACITY: usize = 4;

/// One published recognition result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMessage {
    /// Timestamp of the window's last frame, seconds.
    pub t: f64,
    pub class_id: usize,
    pub class: String,
    pub p: f64,
    pub latency_ms: f64,
}

impl LabelMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub name: String,
    pub received: u64,
    pub emitted: u64,
    pub dropped: u64,
    /// Input queue high-water mark (0 for the source).
    pub queue_high_water: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub stages: Vec<StageStats>,
    pub windows: u64,
    pub labels: u64,
    pub latencies_ms: Vec<f64>,
    pub wall_seconds: f64,
}

impl StreamStats {
    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn max_latency_ms(&self) -> f64 {
        self.latencies_ms.iter().copied().fold(0.0, f64::max)
    }
}

/// A paced stream of frames plus the layout and rate they arrive in.
pub struct FrameSource {
    pub joint_set: JointSetId,
    pub fps: f64,
    /// 0 replays as fast as possible; otherwise timestamps are scaled by 1/speed.
    pub speed: f64,
    /// Queue policy for the whole pipeline.
    pub overflow: Overflow,
    frames: Box<dyn Iterator<Item = Result<SkeletonFrame>> + Send>,
}

impl FrameSource {
    pub fn new(
        joint_set: JointSetId,
        fps: f64,
        speed: f64,
        frames: impl Iterator<Item = Result<SkeletonFrame>> + Send + 'static,
    ) -> Result<Self> {
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(Error::config("speed", "must be >= 0"));
        }
        Ok(FrameSource {
            joint_set,
            fps,
            speed,
            // a lossless as-fast-as-possible replay; drop-oldest for anything live
            overflow: if speed == 0.0 { Overflow::Block } else { Overflow::DropOldest },
            frames: Box::new(frames),
        })
    }

    /// A SKELREC-JSONL stream: header line, then one frame per line.
    pub fn from_reader<R: BufRead + Send + 'static>(reader: R, speed: f64) -> Result<Self> {
        let rec = RecordingReader::new(reader)?;
        let (set, fps) = (rec.header().joint_set, rec.header().fps);
        FrameSource::new(set, fps, speed, rec)
    }
}

/// Replay a recording file; an unreadable file fails here, before any thread
/// starts.
pub fn replay_source(path: &Path, speed: f64) -> Result<FrameSource> {
    let file = std::fs::File::open(path).map_err(|e| Error::Stream(format!("{}: {e}", path.display())))?;
    FrameSource::from_reader(BufReader::new(file), speed)
}

/// Connect to a TCP endpoint that serves a SKELREC-JSONL stream.
pub fn tcp_source(addr: &str) -> Result<FrameSource> {
    let stream = TcpStream::connect(addr).map_err(|e| Error::Stream(format!("{addr}: {e}")))?;
    let mut source = FrameSource::from_reader(BufReader::new(stream), 0.0)?;
    source.overflow = Overflow::DropOldest;
    Ok(source)
}

pub trait LabelSink: Send {
    fn emit(&mut self, msg: &LabelMessage) -> Result<()>;
}

/// Line-delimited JSON to any writer (standard output in the CLI).
pub struct JsonLinesSink<W: Write + Send>(pub W);

impl<W: Write + Send> LabelSink for JsonLinesSink<W> {
    fn emit(&mut self, msg: &LabelMessage) -> Result<()> {
        writeln!(self.0, "{}", msg.to_json())?;
        self.0.flush()?;
        Ok(())
    }
}

/// Collects messages in memory.
#[derive(Clone, Default)]
pub struct CollectSink(pub Arc<Mutex<Vec<LabelMessage>>>);

impl CollectSink {
    pub fn messages(&self) -> Vec<LabelMessage> {
        self.0.lock().expect("sink lock").clone()
    }
}

impl LabelSink for CollectSink {
    fn emit(&mut self, msg: &LabelMessage) -> Result<()> {
        self.0.lock().expect("sink lock").push(msg.clone());
        Ok(())
    }
}

/// Broadcasts JSON lines to every client connected to a listening port.
pub struct TcpBroadcastSink {
    clients: Arc<Mutex<Vec<TcpStream>>>,
    local_port: u16,
}

impl TcpBroadcastSink {
    pub fn bind(port: u16) -> Result<Self> {
        let listener = TcpListener::bind(("0.0.0.0", port)).map_err(|e| Error::Stream(format!("listen on {port}: {e}")))?;
        let local_port = listener.local_addr()?.port();
        let clients = Arc::new(Mutex::new(Vec::new()));
        let accepted = clients.clone();
        thread::spawn(move || {
            for conn in listener.incoming().flatten() {
                accepted.lock().expect("client list").push(conn);
            }
        });
        Ok(TcpBroadcastSink { clients, local_port })
    }

    pub fn port(&self) -> u16 {
        self.local_port
    }
}

impl LabelSink for TcpBroadcastSink {
    fn emit(&mut self, msg: &LabelMessage) -> Result<()> {
        let line = format!("{}\n", msg.to_json());
        self.clients
            .lock()
            .expect("client list")
            .retain_mut(|c| c.write_all(line.as_bytes()).is_ok());
        Ok(())
    }
}

struct TimedFrame {
    frame: SkeletonFrame,
    arrived: Instant,
}

struct WindowJob {
    t: f64,
    arrived: Instant,
    window: WindowTensor,
}

/// Check that the map, pipeline and checkpoint agree on layouts.
pub fn check_compatibility(source: JointSetId, map: &JointMap, ckpt: &Checkpoint) -> Result<()> {
    if map.source != source {
        return Err(Error::Stream(format!(
            "joint map expects {} input but the source delivers {}",
            map.source.as_str(),
            source.as_str()
        )));
    }
    let d = map.target.joint_count() * 3;
    if map.target != ckpt.meta.joint_set || d != ckpt.params.config.input_channels {
        return Err(Error::Stream(format!(
            "checkpoint expects {} ({} channels) but the joint map produces {} ({d} channels)",
            ckpt.meta.joint_set.as_str(),
            ckpt.params.config.input_channels,
            map.target.as_str()
        )));
    }
    Ok(())
}

/// Run the staged pipeline to completion. Malformed frames and windows that
/// cannot be normalized are counted and skipped.
pub fn run_stream(
    source: FrameSource,
    map: &JointMap,
    pipeline: &Pipeline,
    ckpt: &Checkpoint,
    sink: &mut dyn LabelSink,
) -> Result<StreamStats> {
    check_compatibility(source.joint_set, map, ckpt)?;
    pipeline.validate()?;
    let (fps, policy) = (source.fps, source.overflow);
    let mut windower = SlidingWindower::new(&pipeline.window, fps)?;
    let started = Instant::now();

    let raw: BoundedQueue<TimedFrame> = BoundedQueue::new(FRAME_QUEUE_CAPACITY, policy);
    let formatted: BoundedQueue<TimedFrame> = BoundedQueue::new(FRAME_QUEUE_CAPACITY, policy);
    let windows: BoundedQueue<WindowJob> = BoundedQueue::new(WINDOW_QUEUE_CAPACITY, policy);

    let (src, fmt, pack, (rec, sink_stats, latencies)) = thread::scope(|s| {
        let FrameSource { speed, frames, .. } = source;
        let raw_ref = &raw;
        let source_thread = s.spawn(move || {
            let mut st = StageStats { name: "source".into(), ..Default::default() };
            let mut first: Option<f64> = None;
            for item in frames {
                st.received += 1;
                match item {
                    Ok(frame) => {
                        if speed > 0.0 {
                            let t0 = *first.get_or_insert(frame.t);
                            let due = started + Duration::from_secs_f64(((frame.t - t0) / speed).max(0.0));
                            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                                thread::sleep(wait);
                            }
                        }
                        raw_ref.push(TimedFrame { frame, arrived: Instant::now() });
                        st.emitted += 1;
                    }
                    Err(_) => st.dropped += 1,
                }
            }
            raw_ref.close();
            st
        });

        let formatted_ref = &formatted;
        let formatter = s.spawn(move || {
            let mut st = StageStats { name: "formatter".into(), ..Default::default() };
            while let Some(tf) = raw_ref.pop() {
                st.received += 1;
                if tf.frame.joint_count() != map.source.joint_count() {
                    st.dropped += 1;
                    continue;
                }
                formatted_ref.push(TimedFrame { frame: remap_frame(&tf.frame, map), arrived: tf.arrived });
                st.emitted += 1;
            }
            formatted_ref.close();
            st
        });

        let windows_ref = &windows;
        let packer = s.spawn(move || {
            let mut st = StageStats { name: "packer".into(), ..Default::default() };
            let mut produced = 0u64;
            while let Some(tf) = formatted_ref.pop() {
                st.received += 1;
                let before = windower.out_of_order();
                let due = windower.push(tf.frame);
                if windower.out_of_order() > before {
                    st.dropped += 1;
                    continue;
                }
                st.emitted += 1;
                if let Some(frames) = due {
                    let t = frames.last().map_or(0.0, |f| f.t);
                    if let Ok(window) = pipeline.frames_window(frames, fps) {
                        windows_ref.push(WindowJob { t, arrived: tf.arrived, window });
                        produced += 1;
                    }
                }
            }
            windows_ref.close();
            (st, produced)
        });

        let recognizer = s.spawn(move || {
            let mut st = StageStats { name: "recognizer".into(), ..Default::default() };
            let mut sink_st = StageStats { name: "sink".into(), ..Default::default() };
            let mut latencies = Vec::new();
            let mut failure = None;
            while let Some(job) = windows_ref.pop() {
                st.received += 1;
                let (class_id, probs) = match predict(&ckpt.params, &job.window) {
                    Ok(p) => p,
                    Err(e) => {
                        st.dropped += 1;
                        failure.get_or_insert(e);
                        continue;
                    }
                };
                st.emitted += 1;
                let latency_ms = job.arrived.elapsed().as_secs_f64() * 1e3;
                let msg = LabelMessage {
                    t: job.t,
                    class_id,
                    class: ckpt.meta.classes.name(class_id).unwrap_or_default().to_string(),
                    p: probs[class_id],
                    latency_ms,
                };
                sink_st.received += 1;
                match sink.emit(&msg) {
                    Ok(()) => {
                        sink_st.emitted += 1;
                        latencies.push(latency_ms);
                    }
                    Err(_) => sink_st.dropped += 1,
                }
            }
            ((st, failure), sink_st, latencies)
        });

        (
            source_thread.join().expect("source thread"),
            formatter.join().expect("formatter thread"),
            packer.join().expect("packer thread"),
            recognizer.join().expect("recognizer thread"),
        )
    });

    let (mut fmt_stats, mut pack_stats, mut rec_stats) = (fmt, pack.0, rec.0);
    // evictions count against the stage whose input queue overflowed
    for (stage, q) in [
        (&mut fmt_stats, raw.stats()),
        (&mut pack_stats, formatted.stats()),
        (&mut rec_stats, windows.stats()),
    ] {
        stage.received += q.dropped;
        stage.dropped += q.dropped;
        stage.queue_high_water = q.high_water;
    }
    if let Some(e) = rec.1 {
        if rec_stats.emitted == 0 {
            return Err(e);
        }
    }
    let labels = sink_stats.emitted;
    Ok(StreamStats {
        stages: vec![src, fmt_stats, pack_stats, rec_stats, sink_stats],
        windows: pack.1,
        labels,
        latencies_ms: latencies,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// The same windows the stream would form, classified in one batch pass.
/// Returns `(t_window_end, class_id)` per window.
pub fn batch_labels(
    frames: impl IntoIterator<Item = SkeletonFrame>,
    fps: f64,
    map: &JointMap,
    pipeline: &Pipeline,
    ckpt: &Checkpoint,
) -> Result<Vec<(f64, usize)>> {
    let mut windower = SlidingWindower::new(&pipeline.window, fps)?;
    let mut jobs = Vec::new();
    for f in frames {
        if let Some(w) = windower.push(remap_frame(&f, map)) {
            let t = w.last().map_or(0.0, |f| f.t);
            if let Ok(window) = pipeline.frames_window(w, fps) {
                jobs.push((t, window));
            }
        }
    }
    let mut out = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(32) {
        let refs: Vec<&WindowTensor> = chunk.iter().map(|(_, w)| w).collect();
        for ((t, _), (class, _)) in chunk.iter().zip(predict_batch(&ckpt.params, &refs)?) {
            out.push((*t, class));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CheckpointMeta, ModelConfig, ModelParams, StageConfig};
    use crate::skeleton::ClassTable;
    use crate::synth::{generate, SynthConfig};

    fn checkpoint() -> Checkpoint {
        let model = ModelConfig {
            stem_filters: 8,
            stages: vec![StageConfig { blocks: 1, filters: 8, stride: 2 }],
            kernel_size: 3,
            ..ModelConfig::default()
        };
        Checkpoint {
            params: ModelParams::init(&model, 1).unwrap(),
            meta: CheckpointMeta {
                model,
                joint_set: JointSetId::Common,
                classes: ClassTable::synthetic(),
                normalization: Default::default(),
                window: Default::default(),
            },
        }
    }

    fn frames(seconds: f64, fps: f64) -> Vec<SkeletonFrame> {
        let cfg = SynthConfig { samples_per_class: 1, duration_seconds: seconds, fps, ..Default::default() };
        generate(&cfg).unwrap().remove(0).frames
    }

    fn source(f: Vec<SkeletonFrame>, fps: f64, speed: f64) -> FrameSource {
        FrameSource::new(JointSetId::Common, fps, speed, f.into_iter().map(Ok)).unwrap()
    }

    #[test]
    fn one_label_per_hop_after_fill() {
        let ckpt = checkpoint();
        let mut sink = CollectSink::default();
        let stats = run_stream(
            source(frames(10.0, 30.0), 30.0, 0.0),
            &JointMap::identity(JointSetId::Common),
            &Pipeline::default(),
            &ckpt,
            &mut sink,
        )
        .unwrap();
        let msgs = sink.messages();
        let ts: Vec<f64> = msgs.iter().map(|m| (m.t * 30.0).round()).collect();
        assert_eq!(ts, vec![89.0, 119.0, 149.0, 179.0, 209.0, 239.0, 269.0, 299.0]);
        assert_eq!(stats.labels, 8);
        for m in &msgs {
            assert!((0.0..=1.0).contains(&m.p) && m.latency_ms >= 0.0);
            assert_eq!(ClassTable::synthetic().name(m.class_id), Some(m.class.as_str()));
        }
        for s in &stats.stages {
            assert!(s.emitted + s.dropped <= s.received, "{s:?}");
        }
        assert_eq!(stats.stage("source").unwrap().emitted, 300);
    }

    #[test]
    fn empty_source_exits_cleanly() {
        let mut sink = CollectSink::default();
        let stats = run_stream(
            source(Vec::new(), 30.0, 0.0),
            &JointMap::identity(JointSetId::Common),
            &Pipeline::default(),
            &checkpoint(),
            &mut sink,
        )
        .unwrap();
        assert!(sink.messages().is_empty());
        assert!(stats.stages.iter().all(|s| s.dropped == 0 && s.received == 0));
    }

    #[test]
    fn stream_matches_batch() {
        let ckpt = checkpoint();
        let f = frames(12.0, 30.0);
        let map = JointMap::identity(JointSetId::Common);
        let mut sink = CollectSink::default();
        run_stream(source(f.clone(), 30.0, 0.0), &map, &Pipeline::default(), &ckpt, &mut sink).unwrap();
        let streamed: Vec<(f64, usize)> = sink.messages().iter().map(|m| (m.t, m.class_id)).collect();
        assert_eq!(streamed, batch_labels(f, 30.0, &map, &Pipeline::default(), &ckpt).unwrap());
    }

    #[test]
    fn malformed_frames_are_counted() {
        let mut items: Vec<Result<SkeletonFrame>> = frames(4.0, 30.0).into_iter().map(Ok).collect();
        items.insert(10, Err(Error::parse(12, "bad")));
        let src = FrameSource::new(JointSetId::Common, 30.0, 0.0, items.into_iter()).unwrap();
        let mut sink = CollectSink::default();
        let stats = run_stream(src, &JointMap::identity(JointSetId::Common), &Pipeline::default(), &checkpoint(), &mut sink).unwrap();
        let s = stats.stage("source").unwrap();
        assert_eq!((s.received, s.emitted, s.dropped), (121, 120, 1));
        assert_eq!(sink.messages().len(), 2);
    }

    #[test]
    fn mismatched_checkpoint_fails_at_startup() {
        let map = JointMap::builtin_to_common(JointSetId::Tracker19);
        let mut sink = CollectSink::default();
        let err = run_stream(source(frames(1.0, 30.0), 30.0, 0.0), &map, &Pipeline::default(), &checkpoint(), &mut sink);
        assert!(matches!(err, Err(Error::Stream(_))));
        let mut ckpt = checkpoint();
        ckpt.meta.joint_set = JointSetId::Ntu25;
        let err = run_stream(
            source(frames(1.0, 30.0), 30.0, 0.0),
            &JointMap::identity(JointSetId::Common),
            &Pipeline::default(),
            &ckpt,
            &mut sink,
        );
        assert!(matches!(err, Err(Error::Stream(_))));
    }

    struct SlowSink(Duration, CollectSink);

    impl LabelSink for SlowSink {
        fn emit(&mut self, msg: &LabelMessage) -> Result<()> {
            thread::sleep(self.0);
            self.1.emit(msg)
        }
    }

    #[test]
    fn slow_sink_drops_instead_of_blocking() {
        let fps = 120.0;
        let pipeline = Pipeline {
            window: crate::windowing::WindowConfig { hop_seconds: 1.0 / 120.0, ..Default::default() },
            ..Default::default()
        };
        let f = frames(4.0, fps);
        let n = f.len() as u64;
        let mut sink = SlowSink(Duration::from_millis(40), CollectSink::default());
        let started = Instant::now();
        let stats = run_stream(
            source(f, fps, 1.0),
            &JointMap::identity(JointSetId::Common),
            &pipeline,
            &checkpoint(),
            &mut sink,
        )
        .unwrap();
        let rec = stats.stage("recognizer").unwrap();
        assert!(rec.dropped > 0, "{rec:?}");
        assert_eq!(rec.received, rec.emitted + rec.dropped);
        assert_eq!(stats.stage("source").unwrap().emitted, n);
        assert!(started.elapsed() < Duration::from_secs(8));
        let ts: Vec<f64> = sink.1.messages().iter().map(|m| m.t).collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn paced_replay_takes_real_time() {
        let started = Instant::now();
        let mut sink = CollectSink::default();
        run_stream(
            source(frames(1.0, 30.0), 30.0, 2.0),
            &JointMap::identity(JointSetId::Common),
            &Pipeline::default(),
            &checkpoint(),
            &mut sink,
        )
        .unwrap();
        let secs = started.elapsed().as_secs_f64();
        assert!((0.4..0.8).contains(&secs), "{secs}");
    }

    #[test]
    fn label_json_schema() {
        let m = LabelMessage { t: 3.0, class_id: 2, class: "kick".into(), p: 0.5, latency_ms: 1.25 };
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v, serde_json::json!({"t": 3.0, "class_id": 2, "class": "kick", "p": 0.5, "latency_ms": 1.25}));
    }

    #[test]
    fn tcp_sink_broadcasts_lines() {
        let mut sink = TcpBroadcastSink::bind(0).unwrap();
        let client = TcpStream::connect(("127.0.0.1", sink.port())).unwrap();
        let m = LabelMessage { t: 1.0, class_id: 0, class: "wave_hand".into(), p: 0.9, latency_ms: 2.0 };
        let deadline = Instant::now() + Duration::from_secs(5);
        while sink.clients.lock().unwrap().is_empty() && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(5));
        }
        sink.emit(&m).unwrap();
        let mut line = String::new();
        BufReader::new(client).read_line(&mut line).unwrap();
        assert_eq!(serde_json::from_str::<LabelMessage>(&line).unwrap(), m);
    }
}
