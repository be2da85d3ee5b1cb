//! Super-resolution oracles: anything that maps an sRGB image to an image
//! `scale` times larger. Built-in deterministic oracles plus a client for an
//! out-of-process service speaking a line-delimited JSON + raw f32 protocol.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{load_png, Image};
use crate::texture::upsample_bicubic;

/// `view_id` used when the oracle is asked to upscale a texture rather than a view.
pub const TEXTURE_VIEW_ID: u64 = u64::MAX;
pub const SUPPORTED_SCALES: [usize; 4] = [1, 2, 4, 8];
pub const MIN_SIDE: usize = 16;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
const MAX_HEADER_BYTES: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle '{oracle}' does not support scale {scale}")]
    UnsupportedScale { oracle: String, scale: usize },
    #[error("invalid oracle request: {0}")]
    InvalidRequest(String),
    #[error("no stored image for view {view_id}")]
    MissingView { view_id: u64 },
    #[error("ground-truth store: {0}")]
    Store(String),
    #[error("sidecar {endpoint}: transport error: {message}")]
    Transport { endpoint: String, message: String },
    #[error("sidecar {endpoint}: timed out after {seconds:.1} s")]
    Timeout { endpoint: String, seconds: f64 },
    #[error("sidecar {endpoint}: protocol error: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("sidecar {endpoint}: remote failure: {message}")]
    Remote { endpoint: String, message: String },
}

impl OracleError {
    /// True for failures that mean the service cannot be reached at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, OracleError::Transport { .. } | OracleError::Timeout { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrRequest {
    /// sRGB-encoded, 3 channels.
    pub image: Image,
    pub scale: usize,
    pub view_id: u64,
    pub prompt: Option<String>,
}

impl SrRequest {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.image.channels != 3 {
            return Err(OracleError::InvalidRequest(format!(
                "expected 3 channels, got {}",
                self.image.channels
            )));
        }
        if self.scale > 1 && (self.image.width < MIN_SIDE || self.image.height < MIN_SIDE) {
            return Err(OracleError::InvalidRequest(format!(
                "image {}x{} is smaller than {MIN_SIDE}x{MIN_SIDE}",
                self.image.width, self.image.height
            )));
        }
        if self.image.data.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::InvalidRequest("non-finite input value".into()));
        }
        Ok(())
    }

    pub fn output_size(&self) -> (usize, usize) {
        (self.image.width * self.scale, self.image.height * self.scale)
    }
}

pub trait SrOracle: Send + Sync {
    fn name(&self) -> String;

    fn supports(&self, scale: usize) -> bool {
        SUPPORTED_SCALES.contains(&scale)
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn upscale(&self, req: &SrRequest) -> Result<Image, OracleError>;
}

fn check(oracle: &dyn SrOracle, req: &SrRequest) -> Result<(), OracleError> {
    if !oracle.supports(req.scale) {
        return Err(OracleError::UnsupportedScale {
            oracle: oracle.name(),
            scale: req.scale,
        });
    }
    req.validate()
}

/// Returns the input unchanged; only scale 1 is meaningful.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityOracle;

impl SrOracle for IdentityOracle {
    fn name(&self) -> String {
        "identity".into()
    }

    fn supports(&self, scale: usize) -> bool {
        scale == 1
    }

    fn upscale(&self, req: &SrRequest) -> Result<Image, OracleError> {
        check(self, req)?;
        Ok(req.image.clone())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BicubicOracle;

impl SrOracle for BicubicOracle {
    fn name(&self) -> String {
        "bicubic".into()
    }

    fn upscale(&self, req: &SrRequest) -> Result<Image, OracleError> {
        check(self, req)?;
        Ok(upsample_bicubic(&req.image, req.scale))
    }
}

/// Bicubic followed by an unsharp mask.
#[derive(Debug, Clone, Copy)]
pub struct SharpenOracle {
    pub sigma: f32,
    pub amount: f32,
}

impl Default for SharpenOracle {
    fn default() -> Self {
        SharpenOracle { sigma: 1.0, amount: 0.6 }
    }
}

impl SrOracle for SharpenOracle {
    fn name(&self) -> String {
        "sharpen".into()
    }

    fn upscale(&self, req: &SrRequest) -> Result<Image, OracleError> {
        check(self, req)?;
        let up = upsample_bicubic(&req.image, req.scale);
        if req.scale == 1 {
            return Ok(up);
        }
        Ok(unsharp_mask(&up, self.sigma, self.amount))
    }
}

pub fn unsharp_mask(img: &Image, sigma: f32, amount: f32) -> Image {
    let blurred = gaussian_blur(img, sigma);
    let mut out = img.clone();
    for (o, b) in out.data.iter_mut().zip(&blurred.data) {
        *o = (*o + amount * (*o - b)).clamp(0.0, 1.0);
    }
    out
}

/// Separable normalized Gaussian, radius ceil(3σ), clamp-to-edge.
pub fn gaussian_blur(img: &Image, sigma: f32) -> Image {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h, c) = (img.width as isize, img.height as isize, img.channels);
    let pass = |src: &Image, horizontal: bool| {
        let mut dst = src.clone();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0f32;
                    for (i, kv) in k.iter().enumerate() {
                        let o = i as isize - r;
                        let (sx, sy) = if horizontal {
                            ((x + o).clamp(0, w - 1), y)
                        } else {
                            (x, (y + o).clamp(0, h - 1))
                        };
                        acc += kv * src.data[((sy * w + sx) as usize) * c + ch];
                    }
                    dst.data[((y * w + x) as usize) * c + ch] = acc;
                }
            }
        }
        dst
    };
    pass(&pass(img, true), false)
}

/// Source of exact target images keyed by view id (already sRGB-encoded).
pub trait GtStore: Send + Sync {
    fn get(&self, view_id: u64, width: usize, height: usize) -> Result<Image, OracleError>;
}

#[derive(Debug, Clone, Default)]
pub struct MapStore {
    pub images: HashMap<u64, Image>,
}

impl GtStore for MapStore {
    fn get(&self, view_id: u64, _w: usize, _h: usize) -> Result<Image, OracleError> {
        self.images.get(&view_id).cloned().ok_or(OracleError::MissingView { view_id })
    }
}

/// Reads `view_XXXX.png` from a directory on demand.
#[derive(Debug, Clone)]
pub struct DirStore {
    pub dir: PathBuf,
}

impl DirStore {
    pub fn path_for(dir: &Path, view_id: u64) -> PathBuf {
        dir.join(format!("view_{view_id:04}.png"))
    }
}

impl GtStore for DirStore {
    fn get(&self, view_id: u64, _w: usize, _h: usize) -> Result<Image, OracleError> {
        let p = Self::path_for(&self.dir, view_id);
        if !p.exists() {
            return Err(OracleError::MissingView { view_id });
        }
        load_png(&p, 3).map_err(|e| OracleError::Store(e.to_string()))
    }
}

/// Replays stored ground-truth renderings; ignores the input content.
pub struct CheatOracle {
    pub store: Box<dyn GtStore>,
}

impl CheatOracle {
    pub fn new(store: impl GtStore + 'static) -> Self {
        CheatOracle { store: Box::new(store) }
    }
}

impl SrOracle for CheatOracle {
    fn name(&self) -> String {
        "cheat".into()
    }

    fn upscale(&self, req: &SrRequest) -> Result<Image, OracleError> {
        check(self, req)?;
        let (w, h) = req.output_size();
        let img = self.store.get(req.view_id, w, h)?;
        if (img.width, img.height, img.channels) != (w, h, 3) {
            return Err(OracleError::Store(format!(
                "view {} is stored at {}x{}x{}, expected {w}x{h}x3",
                req.view_id, img.width, img.height, img.channels
            )));
        }
        Ok(img)
    }
}

// ---------------------------------------------------------------------------
// sidecar client

#[derive(Debug, Serialize)]
struct RequestHeader<'a> {
    id: u64,
    op: &'a str,
    width: usize,
    height: usize,
    channels: usize,
    scale: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<&'a str>,
}

#[derive(Debug, Deserialize)]
struct ResponseHeader {
    id: u64,
    status: String,
    #[serde(default)]
    width: usize,
    #[serde(default)]
    height: usize,
    #[serde(default)]
    channels: usize,
    #[serde(default)]
    message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    /// Program and arguments; the protocol runs over its stdin/stdout.
    Stdio(Vec<String>),
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp://{a}"),
            Endpoint::Stdio(cmd) => write!(f, "stdio:{}", cmd.join(" ")),
        }
    }
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    _child: Option<ChildGuard>,
}

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Pumps a blocking reader through a channel so reads can time out.
struct ChannelReader {
    rx: mpsc::Receiver<std::io::Result<Vec<u8>>>,
    buf: Vec<u8>,
    pos: usize,
    timeout: Duration,
}

impl ChannelReader {
    fn spawn(mut inner: impl Read + Send + 'static, timeout: Duration) -> Self {
        let (tx, rx) = mpsc::sync_channel(4);
        std::thread::spawn(move || loop {
            let mut chunk = vec![0u8; 64 * 1024];
            match inner.read(&mut chunk) {
                Ok(0) => {
                    let _ = tx.send(Ok(Vec::new()));
                    return;
                }
                Ok(n) => {
                    chunk.truncate(n);
                    if tx.send(Ok(chunk)).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            }
        });
        ChannelReader { rx, buf: Vec::new(), pos: 0, timeout }
    }
}

impl Read for ChannelReader {
    fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
        if self.pos == self.buf.len() {
            match self.rx.recv_timeout(self.timeout) {
                Ok(Ok(chunk)) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                Ok(Err(e)) => return Err(e),
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    return Err(std::io::Error::new(std::io::ErrorKind::TimedOut, "read timed out"))
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Client for the external SR service. One request in flight per client;
/// the connection is (re)opened lazily and dropped after any failure.
pub struct SidecarClient {
    endpoint: Endpoint,
    timeout: Duration,
    prompt: Option<String>,
    next_id: AtomicU64,
    conn: Mutex<Option<Connection>>,
}

impl SidecarClient {
    pub fn new(endpoint: Endpoint) -> Self {
        SidecarClient {
            endpoint,
            timeout: DEFAULT_TIMEOUT,
            prompt: None,
            next_id: AtomicU64::new(1),
            conn: Mutex::new(None),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_prompt(mut self, prompt: Option<String>) -> Self {
        self.prompt = prompt;
        self
    }

    /// Uses an already-open byte stream pair (e.g. a socket pair in tests).
    pub fn with_streams(
        name: &str,
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Self {
        let client = SidecarClient::new(Endpoint::Stdio(vec![name.to_string()])).with_timeout(timeout);
        *client.conn.lock().unwrap() = Some(Connection {
            reader: Box::new(BufReader::new(ChannelReader::spawn(reader, timeout))),
            writer: Box::new(writer),
            _child: None,
        });
        client
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn transport(&self, message: impl std::fmt::Display) -> OracleError {
        OracleError::Transport {
            endpoint: self.endpoint.to_string(),
            message: message.to_string(),
        }
    }

    fn protocol(&self, message: impl std::fmt::Display) -> OracleError {
        OracleError::Protocol {
            endpoint: self.endpoint.to_string(),
            message: message.to_string(),
        }
    }

    fn io_error(&self, e: std::io::Error) -> OracleError {
        match e.kind() {
            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => OracleError::Timeout {
                endpoint: self.endpoint.to_string(),
                seconds: self.timeout.as_secs_f64(),
            },
            std::io::ErrorKind::UnexpectedEof => self.transport("connection closed by sidecar"),
            _ => self.transport(e),
        }
    }

    fn connect(&self) -> Result<Connection, OracleError> {
        match &self.endpoint {
            Endpoint::Tcp(addr) => {
                let addrs: Vec<_> = addr
                    .to_socket_addrs()
                    .map_err(|e| self.transport(format!("cannot resolve: {e}")))?
                    .collect();
                let mut last = None;
                for a in addrs {
                    match TcpStream::connect_timeout(&a, self.timeout) {
                        Ok(s) => {
                            s.set_read_timeout(Some(self.timeout)).map_err(|e| self.transport(e))?;
                            s.set_write_timeout(Some(self.timeout)).map_err(|e| self.transport(e))?;
                            let _ = s.set_nodelay(true);
                            let r = s.try_clone().map_err(|e| self.transport(e))?;
                            return Ok(Connection {
                                reader: Box::new(BufReader::new(r)),
                                writer: Box::new(s),
                                _child: None,
                            });
                        }
                        Err(e) => last = Some(e),
                    }
                }
                Err(self.transport(match last {
                    Some(e) => e.to_string(),
                    None => "address resolved to nothing".into(),
                }))
            }
            Endpoint::Stdio(cmd) => {
                let (prog, args) = cmd.split_first().ok_or_else(|| self.transport("empty command"))?;
                let mut child = Command::new(prog)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| self.transport(format!("cannot spawn: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Connection {
                    reader: Box::new(BufReader::new(ChannelReader::spawn(stdout, self.timeout))),
                    writer: Box::new(stdin),
                    _child: Some(ChildGuard(child)),
                })
            }
        }
    }

    fn exchange(&self, conn: &mut Connection, req: &SrRequest, id: u64) -> Result<Image, OracleError> {
        let (w, h) = (req.image.width, req.image.height);
        let header = RequestHeader {
            id,
            op: "upscale",
            width: w,
            height: h,
            channels: 3,
            scale: req.scale,
            prompt: req.prompt.as_deref().or(self.prompt.as_deref()),
        };
        let mut bytes = serde_json::to_vec(&header).expect("header serializes");
        bytes.push(b'\n');
        bytes.reserve(req.image.data.len() * 4);
        for v in &req.image.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        conn.writer.write_all(&bytes).map_err(|e| self.io_error(e))?;
        conn.writer.flush().map_err(|e| self.io_error(e))?;

        let mut line = Vec::new();
        let n = (&mut conn.reader)
            .take(MAX_HEADER_BYTES as u64)
            .read_until(b'\n', &mut line)
            .map_err(|e| self.io_error(e))?;
        if n == 0 {
            return Err(self.transport("connection closed by sidecar"));
        }
        if line.last() != Some(&b'\n') {
            return Err(self.protocol("response header is not newline-terminated"));
        }
        let resp: ResponseHeader = serde_json::from_slice(&line)
            .map_err(|e| self.protocol(format!("malformed response header: {e}")))?;
        if resp.id != id {
            return Err(self.protocol(format!("response id {} does not match request id {id}", resp.id)));
        }
        match resp.status.as_str() {
            "ok" => {}
            "error" => {
                return Err(OracleError::Remote {
                    endpoint: self.endpoint.to_string(),
                    message: resp.message.unwrap_or_else(|| "unspecified".into()),
                })
            }
            s => return Err(self.protocol(format!("unknown status '{s}'"))),
        }
        let (ew, eh) = req.output_size();
        if (resp.width, resp.height, resp.channels) != (ew, eh, 3) {
            return Err(self.protocol(format!(
                "response dimensions {}x{}x{} do not match expected {ew}x{eh}x3",
                resp.width, resp.height, resp.channels
            )));
        }
        let mut payload = vec![0u8; ew * eh * 12];
        conn.reader.read_exact(&mut payload).map_err(|e| self.io_error(e))?;
        let mut data = Vec::with_capacity(ew * eh * 3);
        for (i, c) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(self.protocol(format!("non-finite value at float {i}")));
            }
            data.push(v.clamp(0.0, 1.0));
        }
        Ok(Image { width: ew, height: eh, channels: 3, data })
    }
}

impl SrOracle for SidecarClient {
    fn name(&self) -> String {
        format!("sidecar({})", self.endpoint)
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn upscale(&self, req: &SrRequest) -> Result<Image, OracleError> {
        check(self, req)?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        let result = self.exchange(guard.as_mut().expect("connected"), req, id);
        if result.is_err() {
            // stream position is unknown after a failure
            *guard = None;
        }
        result
    }
}

/// Parsed `--oracle` selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleSpec {
    Identity,
    Bicubic,
    Sharpen,
    Cheat(PathBuf),
    Sidecar(Endpoint),
}

impl std::str::FromStr for OracleSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identity" => return Ok(OracleSpec::Identity),
            "bicubic" => return Ok(OracleSpec::Bicubic),
            "sharpen" => return Ok(OracleSpec::Sharpen),
            _ => {}
        }
        if let Some(dir) = s.strip_prefix("cheat:") {
            if dir.is_empty() {
                return Err("cheat oracle needs a directory: cheat:DIR".into());
            }
            return Ok(OracleSpec::Cheat(PathBuf::from(dir)));
        }
        if let Some(cmd) = s.strip_prefix("sidecar-stdio:") {
            let parts: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if parts.is_empty() {
                return Err("sidecar-stdio needs a command".into());
            }
            return Ok(OracleSpec::Sidecar(Endpoint::Stdio(parts)));
        }
        if let Some(addr) = s.strip_prefix("sidecar:") {
            let ok = addr.rsplit_once(':').is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok());
            if !ok {
                return Err(format!("expected sidecar:HOST:PORT, got '{s}'"));
            }
            return Ok(OracleSpec::Sidecar(Endpoint::Tcp(addr.to_string())));
        }
        Err(format!(
            "unknown oracle '{s}' (expected identity|bicubic|sharpen|cheat:DIR|sidecar:HOST:PORT|sidecar-stdio:CMD)"
        ))
    }
}

impl std::fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleSpec::Identity => write!(f, "identity"),
            OracleSpec::Bicubic => write!(f, "bicubic"),
            OracleSpec::Sharpen => write!(f, "sharpen"),
            OracleSpec::Cheat(d) => write!(f, "cheat:{}", d.display()),
            OracleSpec::Sidecar(Endpoint::Tcp(a)) => write!(f, "sidecar:{a}"),
            OracleSpec::Sidecar(Endpoint::Stdio(c)) => write!(f, "sidecar-stdio:{}", c.join(" ")),
        }
    }
}

impl OracleSpec {
    pub fn build(&self) -> Box<dyn SrOracle> {
        match self {
            OracleSpec::Identity => Box::new(IdentityOracle),
            OracleSpec::Bicubic => Box::new(BicubicOracle),
            OracleSpec::Sharpen => Box::new(SharpenOracle::default()),
            OracleSpec::Cheat(dir) => Box::new(CheatOracle::new(DirStore { dir: dir.clone() })),
            OracleSpec::Sidecar(ep) => Box::new(SidecarClient::new(ep.clone())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::TextureMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::net::TcpListener;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TextureMap::from_fn(w, h, 3, |_, _| (0..3).map(|_| rng.gen::<f32>()).collect())
    }

    fn req(image: Image, scale: usize) -> SrRequest {
        SrRequest { image, scale, view_id: 3, prompt: None }
    }

    #[test]
    fn builtins_are_identity_at_scale_one_and_preserve_constants() {
        let img = random_image(16, 16, 1);
        for o in [&BicubicOracle as &dyn SrOracle, &SharpenOracle::default(), &IdentityOracle] {
            assert_eq!(o.upscale(&req(img.clone(), 1)).unwrap(), img, "{}", o.name());
        }
        let c = TextureMap::filled(16, 16, &[0.3, 0.6, 0.9]);
        for o in [&BicubicOracle as &dyn SrOracle, &SharpenOracle::default()] {
            let out = o.upscale(&req(c.clone(), 4)).unwrap();
            assert_eq!((out.width, out.height), (64, 64));
            for (a, b) in out.data.iter().zip(c.data.iter().cycle()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn unsupported_scale_and_small_inputs_are_rejected() {
        let img = random_image(16, 16, 2);
        assert!(matches!(BicubicOracle.upscale(&req(img.clone(), 3)), Err(OracleError::UnsupportedScale { .. })));
        assert!(matches!(IdentityOracle.upscale(&req(img, 2)), Err(OracleError::UnsupportedScale { .. })));
        let small = random_image(8, 8, 2);
        assert!(matches!(BicubicOracle.upscale(&req(small, 2)), Err(OracleError::InvalidRequest(_))));
    }

    #[test]
    fn bicubic_impulse_matches_kernel_table() {
        // hand-evaluated Catmull-Rom weights at the ×2 sample offsets
        let table = |d: f32| match (d.abs() * 100.0).round() as i32 {
            25 => 0.867_187_5,
            75 => 0.226_562_5,
            125 => -0.070_312_5,
            175 => -0.023_437_5,
            _ => 0.0,
        };
        let mut img = TextureMap::filled(16, 16, &[0.5, 0.5, 0.5]);
        img.texel_mut(8, 8).copy_from_slice(&[1.0, 1.0, 1.0]);
        let out = BicubicOracle.upscale(&req(img, 2)).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let dx = (x as f32 + 0.5) / 2.0 - 0.5 - 8.0;
                let dy = (y as f32 + 0.5) / 2.0 - 0.5 - 8.0;
                let expect = 0.5 + 0.5 * table(dx) * table(dy);
                assert!((out.texel(x, y)[0] - expect).abs() < 1e-6, "({x},{y})");
            }
        }
    }

    #[test]
    fn sharpen_adds_variance_and_stays_in_range() {
        for seed in 0..20 {
            // smooth-ish random field: blurred noise
            let img = gaussian_blur(&random_image(24, 24, seed), 1.5);
            let b = BicubicOracle.upscale(&req(img.clone(), 2)).unwrap();
            let s = SharpenOracle::default().upscale(&req(img, 2)).unwrap();
            let var = |m: &Image| {
                let mean = m.data.iter().map(|v| *v as f64).sum::<f64>() / m.data.len() as f64;
                m.data.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>()
            };
            assert!(var(&s) >= var(&b));
            assert!(s.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn cheat_returns_stored_image_exactly() {
        let gt = random_image(64, 64, 4);
        let mut store = MapStore::default();
        store.images.insert(3, gt.clone());
        let o = CheatOracle::new(store);
        assert_eq!(o.upscale(&req(random_image(16, 16, 5), 4)).unwrap(), gt);
        let mut r = req(random_image(16, 16, 5), 4);
        r.view_id = 9;
        assert!(matches!(o.upscale(&r), Err(OracleError::MissingView { view_id: 9 })));
    }

    #[test]
    fn oracle_spec_parsing() {
        assert_eq!("bicubic".parse::<OracleSpec>().unwrap(), OracleSpec::Bicubic);
        assert_eq!(
            "sidecar:localhost:7001".parse::<OracleSpec>().unwrap(),
            OracleSpec::Sidecar(Endpoint::Tcp("localhost:7001".into()))
        );
        assert_eq!("cheat:/tmp/x".parse::<OracleSpec>().unwrap(), OracleSpec::Cheat("/tmp/x".into()));
        assert!("sidecar:nope".parse::<OracleSpec>().is_err());
        assert!("magic".parse::<OracleSpec>().is_err());
        for s in ["sharpen", "sidecar:h:1", "sidecar-stdio:python3 -m srv"] {
            assert_eq!(s.parse::<OracleSpec>().unwrap().to_string(), s);
        }
    }

    /// Minimal server: reads one request, answers through `respond`.
    fn mock_server<F>(respond: F) -> String
    where
        F: Fn(serde_json::Value, Vec<f32>, &mut TcpStream) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let mut s = stream.unwrap();
                let mut r = BufReader::new(s.try_clone().unwrap());
                loop {
                    let mut line = String::new();
                    if r.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let hdr: serde_json::Value = serde_json::from_str(&line).unwrap();
                    let n = (hdr["width"].as_u64().unwrap() * hdr["height"].as_u64().unwrap() * 3) as usize;
                    let mut buf = vec![0u8; n * 4];
                    r.read_exact(&mut buf).unwrap();
                    let px = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
                    respond(hdr, px, &mut s);
                }
            }
        });
        addr
    }

    fn send(s: &mut TcpStream, header: serde_json::Value, payload: &[f32]) {
        let mut b = serde_json::to_vec(&header).unwrap();
        b.push(b'\n');
        for v in payload {
            b.extend_from_slice(&v.to_le_bytes());
        }
        s.write_all(&b).unwrap();
    }

    fn bicubic_server() -> String {
        mock_server(|hdr, px, s| {
            let (w, h, k) = (
                hdr["width"].as_u64().unwrap() as usize,
                hdr["height"].as_u64().unwrap() as usize,
                hdr["scale"].as_u64().unwrap() as usize,
            );
            let img = TextureMap::from_data(w, h, 3, px).unwrap();
            let out = upsample_bicubic(&img, k);
            send(
                s,
                serde_json::json!({"id": hdr["id"], "status": "ok", "width": w * k, "height": h * k, "channels": 3}),
                &out.data,
            );
        })
    }

    #[test]
    fn sidecar_round_trip_matches_builtin() {
        let client = SidecarClient::new(Endpoint::Tcp(bicubic_server()));
        for seed in 0..3 {
            let img = random_image(16, 20, seed);
            let got = client.upscale(&req(img.clone(), 2)).unwrap();
            let want = BicubicOracle.upscale(&req(img, 2)).unwrap();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn sidecar_wrong_dimensions_is_protocol_error() {
        let addr = mock_server(|hdr, _px, s| {
            send(
                s,
                serde_json::json!({"id": hdr["id"], "status": "ok", "width": 4, "height": 4, "channels": 3}),
                &[0.0; 48],
            );
        });
        let err = SidecarClient::new(Endpoint::Tcp(addr)).upscale(&req(random_image(16, 16, 0), 2)).unwrap_err();
        assert!(matches!(err, OracleError::Protocol { .. }), "{err}");
    }

    #[test]
    fn sidecar_malformed_header_and_remote_error_are_distinct() {
        let addr = mock_server(|hdr, _px, s| {
            if hdr["prompt"] == "fail" {
                send(s, serde_json::json!({"id": hdr["id"], "status": "error", "message": "model crashed"}), &[]);
            } else {
                s.write_all(b"this is not json\n").unwrap();
            }
        });
        let client = SidecarClient::new(Endpoint::Tcp(addr));
        let err = client.upscale(&req(random_image(16, 16, 0), 2)).unwrap_err();
        assert!(matches!(err, OracleError::Protocol { .. }), "{err}");
        let mut r = req(random_image(16, 16, 0), 2);
        r.prompt = Some("fail".into());
        let err = client.upscale(&r).unwrap_err();
        match err {
            OracleError::Remote { message, .. } => assert_eq!(message, "model crashed"),
            e => panic!("expected remote error, got {e}"),
        }
    }

    #[test]
    fn sidecar_connection_refused_names_endpoint() {
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let ep = format!("127.0.0.1:{port}");
        let err = SidecarClient::new(Endpoint::Tcp(ep.clone()))
            .upscale(&req(random_image(16, 16, 0), 2))
            .unwrap_err();
        assert!(matches!(err, OracleError::Transport { .. }));
        assert!(err.is_unreachable());
        assert!(err.to_string().contains(&ep), "{err}");
    }

    #[test]
    fn sidecar_timeout_is_reported() {
        let addr = mock_server(|_hdr, _px, _s| std::thread::sleep(Duration::from_millis(800)));
        let err = SidecarClient::new(Endpoint::Tcp(addr))
            .with_timeout(Duration::from_millis(150))
            .upscale(&req(random_image(16, 16, 0), 2))
            .unwrap_err();
        assert!(matches!(err, OracleError::Timeout { .. }), "{err}");
    }

    #[test]
    fn sidecar_over_stream_pair() {
        use std::os::unix::net::UnixStream;
        let (client_end, mut server_end) = UnixStream::pair().unwrap();
        std::thread::spawn(move || {
            let mut r = BufReader::new(server_end.try_clone().unwrap());
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            let hdr: serde_json::Value = serde_json::from_str(&line).unwrap();
            let mut buf = vec![0u8; 16 * 16 * 12];
            r.read_exact(&mut buf).unwrap();
            let mut b = serde_json::to_vec(
                &serde_json::json!({"id": hdr["id"], "status": "ok", "width": 16, "height": 16, "channels": 3}),
            )
            .unwrap();
            b.push(b'\n');
            b.extend_from_slice(&buf);
            server_end.write_all(&b).unwrap();
        });
        let reader = client_end.try_clone().unwrap();
        let client = SidecarClient::with_streams("pair", reader, client_end, Duration::from_secs(5));
        let img = random_image(16, 16, 7);
        // identity scale: payload is echoed bit-exactly
        assert_eq!(client.upscale(&req(img.clone(), 1)).unwrap(), img);
    }
}
