//! Mutual TLS over rustls with a self-contained test CA.
//!
//! Connections can be driven entirely in memory (client and server state
//! machines exchanging buffers) or over TCP. Clients built from the same
//! [`ClientConfig`] share a session cache, so later connections resume.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use rcgen::{
    date_time_ymd, BasicConstraints, CertificateParams, DnType, ExtendedKeyUsagePurpose, IsCa, KeyPair,
    KeyUsagePurpose,
};
use rustls::crypto::CryptoProvider;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer, ServerName};
use rustls::server::{ClientHello, ResolvesServerCert, WebPkiClientVerifier};
use rustls::sign::CertifiedKey;
use rustls::{ClientConfig, ClientConnection, HandshakeKind, RootCertStore, ServerConfig, ServerConnection};

use crate::error::{Result, SecurityError};

pub const SERVER_NAME: &str = "localhost";

fn provider() -> Arc<CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

/// TLS 1.2 and 1.3 only; older protocol versions are never offered.
const VERSIONS: &[&rustls::SupportedProtocolVersion] = &[&rustls::version::TLS13, &rustls::version::TLS12];

/// A certificate chain plus its private key.
pub struct Identity {
    pub chain: Vec<CertificateDer<'static>>,
    key: Vec<u8>,
}

impl Identity {
    pub fn private_key(&self) -> PrivateKeyDer<'static> {
        PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(self.key.clone()))
    }

    fn certified_key(&self) -> Result<CertifiedKey> {
        let signer = provider()
            .key_provider
            .load_private_key(self.private_key())
            .map_err(SecurityError::from)?;
        Ok(CertifiedKey::new(self.chain.clone(), signer))
    }
}

impl std::fmt::Debug for Identity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Identity").field("chain_len", &self.chain.len()).finish_non_exhaustive()
    }
}

/// Self-signed certificate authority used to issue test identities.
pub struct TestCa {
    cert: rcgen::Certificate,
    key: KeyPair,
}

impl TestCa {
    pub fn generate(name: &str) -> Result<Self> {
        let key = KeyPair::generate()?;
        let mut params = CertificateParams::new(Vec::<String>::new())?;
        params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        params.distinguished_name.push(DnType::CommonName, name);
        params.key_usages = vec![KeyUsagePurpose::KeyCertSign, KeyUsagePurpose::CrlSign];
        let cert = params.self_signed(&key)?;
        Ok(Self { cert, key })
    }

    pub fn cert_der(&self) -> CertificateDer<'static> {
        self.cert.der().clone()
    }

    pub fn roots(&self) -> Result<Arc<RootCertStore>> {
        let mut roots = RootCertStore::empty();
        roots.add(self.cert_der()).map_err(SecurityError::from)?;
        Ok(Arc::new(roots))
    }

    fn issue(&self, cn: &str, sans: Vec<String>, usage: ExtendedKeyUsagePurpose, expired: bool) -> Result<Identity> {
        let key = KeyPair::generate()?;
        let mut params = CertificateParams::new(sans)?;
        params.distinguished_name.push(DnType::CommonName, cn);
        params.extended_key_usages = vec![usage];
        if expired {
            params.not_before = date_time_ymd(2000, 1, 1);
            params.not_after = date_time_ymd(2001, 1, 1);
        } else {
            params.not_before = date_time_ymd(2020, 1, 1);
            params.not_after = date_time_ymd(2100, 1, 1);
        }
        let cert = params.signed_by(&key, &self.cert, &self.key)?;
        Ok(Identity {
            chain: vec![cert.der().clone(), self.cert_der()],
            key: key.serialize_der(),
        })
    }

    pub fn server_identity(&self) -> Result<Identity> {
        self.issue(
            SERVER_NAME,
            vec![SERVER_NAME.to_string()],
            ExtendedKeyUsagePurpose::ServerAuth,
            false,
        )
    }

    pub fn client_identity(&self, client_id: &str) -> Result<Identity> {
        self.issue(client_id, Vec::new(), ExtendedKeyUsagePurpose::ClientAuth, false)
    }

    pub fn expired_client_identity(&self, client_id: &str) -> Result<Identity> {
        self.issue(client_id, Vec::new(), ExtendedKeyUsagePurpose::ClientAuth, true)
    }
}

/// Server certificate resolver whose key material can be swapped while
/// connections are being accepted.
#[derive(Debug)]
pub struct RotatingCertResolver {
    current: RwLock<Arc<CertifiedKey>>,
}

impl RotatingCertResolver {
    pub fn new(identity: &Identity) -> Result<Self> {
        Ok(Self {
            current: RwLock::new(Arc::new(identity.certified_key()?)),
        })
    }

    pub fn rotate(&self, identity: &Identity) -> Result<()> {
        *self.current.write() = Arc::new(identity.certified_key()?);
        Ok(())
    }

    pub fn current_leaf(&self) -> CertificateDer<'static> {
        self.current.read().cert[0].clone()
    }
}

impl ResolvesServerCert for RotatingCertResolver {
    fn resolve(&self, _hello: ClientHello<'_>) -> Option<Arc<CertifiedKey>> {
        Some(self.current.read().clone())
    }
}

/// Server config that requires a client certificate chained to `roots`.
pub fn mutual_server_config(roots: Arc<RootCertStore>, resolver: Arc<RotatingCertResolver>) -> Result<Arc<ServerConfig>> {
    let verifier = WebPkiClientVerifier::builder_with_provider(roots, provider())
        .build()
        .map_err(|e| SecurityError::Tls(e.to_string()))?;
    let config = ServerConfig::builder_with_provider(provider())
        .with_protocol_versions(VERSIONS)?
        .with_client_cert_verifier(verifier)
        .with_cert_resolver(resolver);
    Ok(Arc::new(config))
}

/// Client config; `identity = None` builds a client that presents no
/// certificate, which a mutual server must refuse.
pub fn client_config(roots: Arc<RootCertStore>, identity: Option<&Identity>) -> Result<Arc<ClientConfig>> {
    let builder = ClientConfig::builder_with_provider(provider())
        .with_protocol_versions(VERSIONS)?
        .with_root_certificates(roots);
    let config = match identity {
        Some(id) => builder.with_client_auth_cert(id.chain.clone(), id.private_key())?,
        None => builder.with_no_client_auth(),
    };
    Ok(Arc::new(config))
}

/// Whether the client config would present a certificate.
pub fn presents_certificate(config: &ClientConfig) -> bool {
    config.client_auth_cert_resolver.has_certs()
}

/// An established in-memory client/server connection pair.
pub struct MemoryChannel {
    pub client: ClientConnection,
    pub server: ServerConnection,
    pub handshake_time: Duration,
}

impl MemoryChannel {
    pub fn kind(&self) -> Option<HandshakeKind> {
        self.client.handshake_kind()
    }

    pub fn resumed(&self) -> bool {
        self.kind() == Some(HandshakeKind::Resumed)
    }

    /// Common name of the authenticated client certificate.
    pub fn client_id(&self) -> Option<String> {
        let der = self.server.peer_certificates()?.first()?;
        common_name(der)
    }

    /// Sends `payload` client to server through the record layer and returns
    /// what the server decrypted.
    pub fn transfer(&mut self, payload: &[u8]) -> Result<Vec<u8>> {
        self.client.writer().write_all(payload)?;
        pump(&mut self.client, &mut self.server)?;
        let mut out = Vec::with_capacity(payload.len());
        loop {
            let mut buf = [0u8; 16 * 1024];
            match self.server.reader().read(&mut buf) {
                Ok(0) => break,
                Ok(n) => out.extend_from_slice(&buf[..n]),
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => break,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }
}

/// Runs a full handshake in memory. Post-handshake messages (session
/// tickets) are delivered too, so the next connection can resume.
pub fn connect_in_memory(client_cfg: &Arc<ClientConfig>, server_cfg: &Arc<ServerConfig>) -> Result<MemoryChannel> {
    let start = Instant::now();
    let name = ServerName::try_from(SERVER_NAME).map_err(|e| SecurityError::Tls(e.to_string()))?;
    let mut client = ClientConnection::new(client_cfg.clone(), name)?;
    let mut server = ServerConnection::new(server_cfg.clone())?;
    pump(&mut client, &mut server)?;
    if client.is_handshaking() || server.is_handshaking() {
        return Err(SecurityError::Tls("handshake did not complete".into()));
    }
    let handshake_time = start.elapsed();
    Ok(MemoryChannel {
        client,
        server,
        handshake_time,
    })
}

fn pump(client: &mut ClientConnection, server: &mut ServerConnection) -> Result<()> {
    loop {
        let c2s = drain(|buf| client.write_tls(buf))?;
        if !c2s.is_empty() {
            feed(&c2s, |rd| server.read_tls(rd))?;
            server.process_new_packets()?;
        }
        let s2c = drain(|buf| server.write_tls(buf))?;
        if !s2c.is_empty() {
            feed(&s2c, |rd| client.read_tls(rd))?;
            client.process_new_packets()?;
        }
        if c2s.is_empty() && s2c.is_empty() {
            return Ok(());
        }
    }
}

fn drain(mut write: impl FnMut(&mut Vec<u8>) -> std::io::Result<usize>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    while write(&mut buf)? > 0 {}
    Ok(buf)
}

fn feed(bytes: &[u8], mut read: impl FnMut(&mut &[u8]) -> std::io::Result<usize>) -> Result<()> {
    let mut rd = bytes;
    while !rd.is_empty() {
        if read(&mut rd)? == 0 {
            break;
        }
    }
    Ok(())
}

/// Offers raw handshake bytes to a fresh server connection, for probing how
/// the server reacts to hand-built ClientHellos.
pub fn server_accepts_raw_hello(server_cfg: &Arc<ServerConfig>, hello: &[u8]) -> Result<()> {
    let mut server = ServerConnection::new(server_cfg.clone())?;
    feed(hello, |rd| server.read_tls(rd))?;
    server.process_new_packets()?;
    Ok(())
}

/// A minimal ClientHello record advertising TLS 1.0 and one legacy suite.
pub fn tls10_client_hello() -> Vec<u8> {
    let mut body = vec![0x03, 0x01];
    body.extend_from_slice(&[0x42; 32]);
    body.push(0); // empty session id
    body.extend_from_slice(&[0x00, 0x02, 0x00, 0x2f]); // TLS_RSA_WITH_AES_128_CBC_SHA
    body.extend_from_slice(&[0x01, 0x00]); // null compression
    let mut hs = vec![0x01];
    hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    hs.extend_from_slice(&body);
    let mut record = vec![0x16, 0x03, 0x01];
    record.extend_from_slice(&(hs.len() as u16).to_be_bytes());
    record.extend_from_slice(&hs);
    record
}

/// Extracts the subject common name from a DER certificate.
pub fn common_name(der: &CertificateDer<'_>) -> Option<String> {
    // OID 2.5.4.3 followed by a string type tag and a short length
    const CN_OID: [u8; 5] = [0x06, 0x03, 0x55, 0x04, 0x03];
    let bytes = der.as_ref();
    // the last occurrence is the subject; the issuer name comes first
    let pos = bytes.windows(CN_OID.len()).rposition(|w| w == CN_OID)?;
    let rest = &bytes[pos + CN_OID.len()..];
    let (&_tag, rest) = rest.split_first()?;
    let (&len, rest) = rest.split_first()?;
    let len = usize::from(len);
    if len >= 0x80 || rest.len() < len {
        return None;
    }
    String::from_utf8(rest[..len].to_vec()).ok()
}

/// Accepts one TCP connection, completes the handshake and echoes one
/// message back. Returns the authenticated client id.
pub fn serve_one(listener: &TcpListener, config: Arc<ServerConfig>) -> Result<Option<String>> {
    let (stream, _) = listener.accept()?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let conn = ServerConnection::new(config)?;
    let mut tls = rustls::StreamOwned::new(conn, stream);
    while tls.conn.is_handshaking() {
        tls.conn.complete_io(&mut tls.sock)?;
    }
    let client_id = tls
        .conn
        .peer_certificates()
        .and_then(|c| c.first())
        .and_then(common_name);
    let mut buf = [0u8; 1024];
    let n = tls.read(&mut buf)?;
    tls.write_all(&buf[..n])?;
    tls.flush()?;
    tls.conn.send_close_notify();
    let _ = tls.conn.complete_io(&mut tls.sock);
    Ok(client_id)
}

/// Connects over TCP, sends `message` and returns the echoed reply. A
/// mutual server that refuses the client surfaces here as an error, at the
/// latest when the reply is read.
pub fn connect_tcp(addr: impl ToSocketAddrs, config: Arc<ClientConfig>, message: &[u8]) -> Result<Vec<u8>> {
    let stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let name = ServerName::try_from(SERVER_NAME).map_err(|e| SecurityError::Tls(e.to_string()))?;
    let conn = ClientConnection::new(config, name)?;
    let mut tls = rustls::StreamOwned::new(conn, stream);
    tls.write_all(message)?;
    tls.flush()?;
    let mut reply = Vec::new();
    match tls.read_to_end(&mut reply) {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof && !reply.is_empty() => {}
        Err(e) => return Err(e.into()),
    }
    if reply.is_empty() {
        return Err(SecurityError::Tls("connection closed without reply".into()));
    }
    Ok(reply)
}
