use std::io;
use std::path::Path;

use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::Sha256;

use crate::domain::{ParticipantId, SessionId};

type HmacSha256 = Hmac<Sha256>;

/// Issues and checks `"<participant>.<hex mac>"` join tokens bound to one
/// session.
#[derive(Clone)]
pub struct TokenSigner {
    key: Vec<u8>,
}

impl std::fmt::Debug for TokenSigner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenSigner(..)")
    }
}

impl TokenSigner {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        Self { key: key.into() }
    }

    /// Reads the hex key at `path`, creating a random one if missing.
    pub fn load_or_create(path: &Path) -> io::Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => hex::decode(text.trim())
                .map(Self::new)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                let mut key = vec![0u8; 32];
                rand::thread_rng().fill_bytes(&mut key);
                std::fs::write(path, hex::encode(&key))?;
                Ok(Self::new(key))
            }
            Err(e) => Err(e),
        }
    }

    fn mac(&self, session: &SessionId, participant: &str) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.key).expect("hmac accepts any key length");
        mac.update(session.as_str().as_bytes());
        mac.update(b"\0");
        mac.update(participant.as_bytes());
        mac
    }

    pub fn issue(&self, session: &SessionId, participant: &ParticipantId) -> String {
        let tag = self.mac(session, participant.as_str()).finalize().into_bytes();
        format!("{participant}.{}", hex::encode(tag))
    }

    pub fn verify(&self, session: &SessionId, token: &str) -> Option<ParticipantId> {
        let (participant, tag) = token.rsplit_once('.')?;
        let tag = hex::decode(tag).ok()?;
        self.mac(session, participant).verify_slice(&tag).ok()?;
        Some(ParticipantId::new(participant))
    }
}
