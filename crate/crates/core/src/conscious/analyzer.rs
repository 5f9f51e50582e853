use tracing::warn;

use crate::conscious::options::OptionsList;
use crate::conscious::parse::parse_vlm_output;
use crate::model::{DescriptionPair, Score};
use crate::providers::chat::{chat_with_retry, ChatClient, ChatError, ImageRef, RetryPolicy};

/// Description stored for a frame whose analyzer output never parsed.
pub const UNPARSED: &str = "<unparsed>";

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub pair: DescriptionPair,
    /// `false` when every attempt failed to parse and the uncertain fallback
    /// was used. Such pairs stay out of the reasoner buffer.
    pub parsed: bool,
    /// Analyzer calls that returned text.
    pub attempts: u32,
}

/// Sends one frame to the analyzer and parses its answer.
///
/// Unparseable answers are retried up to `parse_retries` more times, then
/// replaced by `(UNPARSED, 0.5)`. Transport failures are retried under
/// `policy` and then returned.
pub fn analyze_frame(
    client: &dyn ChatClient,
    policy: &RetryPolicy,
    instruction: &str,
    image: &ImageRef,
    options: Option<&OptionsList>,
    parse_retries: u32,
) -> Result<Analysis, ChatError> {
    let mut attempts = 0;
    for _ in 0..=parse_retries {
        let text = chat_with_retry(client, policy, instruction, Some(image))?;
        attempts += 1;
        match parse_vlm_output(&text, options) {
            Ok(pair) => {
                return Ok(Analysis {
                    pair,
                    parsed: true,
                    attempts,
                })
            }
            Err(e) => warn!(
                video = %image.frame.video,
                frame = image.frame.index,
                attempt = attempts,
                "unparseable analyzer output: {e}"
            ),
        }
    }
    Ok(Analysis {
        pair: DescriptionPair {
            description: UNPARSED.to_string(),
            score: Score::UNCERTAIN,
        },
        parsed: false,
        attempts,
    })
}
