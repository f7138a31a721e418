use std::sync::Mutex;

use super::{Capabilities, ModelError, Predictor, Result};
use crate::corpus::{TokenId, Vocabulary};
use crate::protocol::{Client, Endpoint};

/// A predictor living in another process, proxied over the wire protocol.
///
/// Requests on one connection are serialized; open several predictors for
/// parallel use. Gradient and attention capabilities are reported as the
/// server advertises them, but the protocol has no messages for either, so
/// only probabilities can be requested.
pub struct ExternalPredictor {
    client: Mutex<Client>,
    classes: usize,
    capabilities: Capabilities,
    tokens: Vec<String>,
}

impl ExternalPredictor {
    pub fn connect(endpoint: &Endpoint, vocab: &Vocabulary) -> Result<Self> {
        Ok(Self::from_client(Client::connect(endpoint)?, vocab))
    }

    pub fn from_client(client: Client, vocab: &Vocabulary) -> Self {
        let advertised = client.capabilities();
        let capabilities = Capabilities {
            gradients: advertised.iter().any(|c| c == "gradients"),
            attention: advertised.iter().any(|c| c == "attention"),
        };
        Self {
            classes: client.classes(),
            capabilities,
            tokens: vocab.tokens().to_vec(),
            client: Mutex::new(client),
        }
    }
}

impl Predictor for ExternalPredictor {
    fn kind_name(&self) -> &'static str {
        "external"
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn predict_proba(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let tokens = ids
            .iter()
            .map(|&id| {
                self.tokens
                    .get(id as usize)
                    .cloned()
                    .ok_or(ModelError::TokenOutOfRange {
                        id,
                        vocab_size: self.tokens.len(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut client = self.client.lock().unwrap_or_else(|p| p.into_inner());
        Ok(client.predict(&tokens)?)
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }
}
