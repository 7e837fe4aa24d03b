//! On-disk response cache: an append-only record log keyed by request
//! digest. Re-running an experiment replays cached completions instead of
//! paying for provider calls.

use super::{BackendError, ChatBackend, CompletionRequest, CompletionResponse};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    text: String,
    refusal: bool,
}

struct CacheState {
    entries: HashMap<String, (String, bool)>,
    file: File,
}

/// Append-only JSONL cache file. Safe for concurrent use from one process;
/// a torn final line from a crashed writer is dropped (and truncated away)
/// on open.
pub struct ResponseCache {
    path: PathBuf,
    state: Mutex<CacheState>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| BackendError::CacheIo(e.to_string()))?;
        }
        let mut entries = HashMap::new();
        let mut valid_len: u64 = 0;
        if path.exists() {
            let reader = BufReader::new(
                File::open(path).map_err(|e| BackendError::CacheIo(e.to_string()))?,
            );
            for line in reader.split(b'\n') {
                let line = line.map_err(|e| BackendError::CacheIo(e.to_string()))?;
                match serde_json::from_slice::<CacheRecord>(&line) {
                    Ok(rec) => {
                        valid_len += line.len() as u64 + 1;
                        entries.insert(rec.key, (rec.text, rec.refusal));
                    }
                    // Torn tail from an interrupted append: stop here and
                    // truncate below so new appends start on a fresh line.
                    Err(_) => break,
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(path)
            .map_err(|e| BackendError::CacheIo(e.to_string()))?;
        file.set_len(valid_len)
            .map_err(|e| BackendError::CacheIo(e.to_string()))?;
        file.seek(SeekFrom::End(0))
            .map_err(|e| BackendError::CacheIo(e.to_string()))?;
        Ok(ResponseCache {
            path: path.to_path_buf(),
            state: Mutex::new(CacheState { entries, file }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key_hex: &str) -> Option<(String, bool)> {
        self.state.lock().unwrap().entries.get(key_hex).cloned()
    }

    pub fn put(&self, key_hex: &str, text: &str, refusal: bool) -> Result<(), BackendError> {
        let mut state = self.state.lock().unwrap();
        if state.entries.contains_key(key_hex) {
            return Ok(());
        }
        let record = CacheRecord {
            key: key_hex.to_string(),
            text: text.to_string(),
            refusal,
        };
        let mut line =
            serde_json::to_vec(&record).map_err(|e| BackendError::CacheIo(e.to_string()))?;
        line.push(b'\n');
        state
            .file
            .write_all(&line)
            .map_err(|e| BackendError::CacheIo(e.to_string()))?;
        state
            .file
            .flush()
            .map_err(|e| BackendError::CacheIo(e.to_string()))?;
        state
            .entries
            .insert(key_hex.to_string(), (text.to_string(), refusal));
        Ok(())
    }
}

/// Wraps any backend with the response cache. A hit returns the stored
/// text with `cache_hit` set; a miss delegates and stores the result.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        CachedBackend { inner, cache }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let key = req.cache_key().hex();
        if let Some((text, refusal)) = self.cache.get(&key) {
            return Ok(CompletionResponse {
                text,
                refusal,
                latency_ms: None,
                prompt_tokens: None,
                completion_tokens: None,
                cache_hit: true,
            });
        }
        let resp = self.inner.complete(req)?;
        self.cache.put(&key, &resp.text, resp.refusal)?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, SamplingParams};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct CountingBackend {
        calls: AtomicUsize,
    }

    impl ChatBackend for CountingBackend {
        fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(CompletionResponse {
                text: format!("echo: {}", req.messages.last().unwrap().content),
                refusal: false,
                latency_ms: None,
                prompt_tokens: None,
                completion_tokens: None,
                cache_hit: false,
            })
        }
    }

    fn request(content: &str) -> CompletionRequest {
        CompletionRequest {
            model_id: "m".into(),
            messages: vec![ChatMessage::user(content)],
            sampling: SamplingParams::greedy(),
        }
    }

    #[test]
    fn second_identical_request_hits_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(&dir.path().join("cache.jsonl")).unwrap();
        let backend = CachedBackend::new(
            CountingBackend {
                calls: AtomicUsize::new(0),
            },
            cache,
        );
        let first = backend.complete(&request("hello")).unwrap();
        let second = backend.complete(&request("hello")).unwrap();
        assert!(!first.cache_hit);
        assert!(second.cache_hit);
        assert_eq!(first.text, second.text);
        assert_eq!(backend.inner.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.put("k1", "stored text", false).unwrap();
        }
        let reopened = ResponseCache::open(&path).unwrap();
        assert_eq!(reopened.get("k1"), Some(("stored text".to_string(), false)));
    }

    #[test]
    fn torn_final_line_is_dropped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.put("k1", "one", false).unwrap();
        }
        {
            let mut f = OpenOptions::new().append(true).open(&path).unwrap();
            f.write_all(b"{\"key\":\"k2\",\"te").unwrap();
        }
        let reopened = ResponseCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        assert!(reopened.get("k1").is_some());
        reopened.put("k3", "three", true).unwrap();
        drop(reopened);
        let again = ResponseCache::open(&path).unwrap();
        assert_eq!(again.len(), 2);
        assert_eq!(again.get("k3"), Some(("three".to_string(), true)));
    }

    #[test]
    fn refusal_flag_round_trips_through_cache() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = ResponseCache::open(&path).unwrap();
        cache.put("r", "I cannot assist with that request.", true).unwrap();
        assert_eq!(
            cache.get("r"),
            Some(("I cannot assist with that request.".to_string(), true))
        );
    }
}
