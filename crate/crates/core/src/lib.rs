//! Detection, analysis, and prediction of intercommunity mobilizations in a
//! multi-community post/comment event log.

pub mod corpus;
pub mod embed;
pub mod error;
pub mod impact;
pub mod matching;
pub mod mobilization;
pub mod persist;
pub mod pipeline;
pub mod predictor;
pub mod replynet;
pub mod rng;
pub mod sentiment;
pub mod synth;
pub mod text;

#[cfg(test)]
mod testutil;

pub use corpus::{
    extract_crosslinks, load_events, Corpus, CrossLink, CrosslinkConfig, CrosslinkExtraction, Event, LoadReport,
    Window,
};
pub use error::{Error, Result};
pub use matching::{matched_post, matched_user, MatchedPair};
pub use mobilization::{Detector, DetectorConfig, MobilizationRecord, Sentiment, Verdict};
pub use sentiment::{FeatureVector, Forest, ForestConfig, Lexicon};
