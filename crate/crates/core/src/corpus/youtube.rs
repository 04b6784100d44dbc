//! Comment ingestion from the YouTube Data API `commentThreads` endpoint.
//!
//! Live mode pages through the endpoint with `pageToken` until no
//! `nextPageToken` is returned. Fixture mode reads a JSON array of stored
//! response bodies, one element per page, so tests never touch the network.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use super::{validate_chats, Chat, ForumType};
use crate::error::{Error, Result};

pub const API_KEY_VAR: &str = "BESENT_YOUTUBE_API_KEY";
const ENDPOINT: &str = "https://www.googleapis.com/youtube/v3/commentThreads";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchSource {
    Live,
    Fixture,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ThreadPage {
    #[serde(default)]
    pub next_page_token: Option<String>,
    #[serde(default)]
    pub items: Vec<CommentThread>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommentThread {
    pub id: String,
    pub snippet: ThreadSnippet,
    #[serde(default)]
    pub replies: Option<Replies>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ThreadSnippet {
    #[serde(default)]
    pub video_id: Option<String>,
    pub top_level_comment: Comment,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Replies {
    #[serde(default)]
    pub comments: Vec<Comment>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Comment {
    pub id: String,
    pub snippet: CommentSnippet,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommentSnippet {
    #[serde(default)]
    pub video_id: Option<String>,
    #[serde(default)]
    pub text_original: Option<String>,
    #[serde(default)]
    pub text_display: Option<String>,
    #[serde(default)]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub author_channel_id: Option<AuthorChannel>,
    #[serde(default)]
    pub published_at: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AuthorChannel {
    pub value: String,
}

/// Minimal HTTP GET abstraction so pagination can be exercised offline.
pub trait HttpGet {
    /// Returns the response body, or [`Error::Transport`] on a non-2xx status.
    fn get(&self, url: &str) -> Result<String>;
}

pub struct UreqHttp;

impl HttpGet for UreqHttp {
    fn get(&self, url: &str) -> Result<String> {
        match ureq::get(url).call() {
            Ok(mut resp) => resp.body_mut().read_to_string().map_err(|e| Error::Transport {
                status: 0,
                message: e.to_string(),
            }),
            Err(ureq::Error::StatusCode(status)) => Err(Error::Transport {
                status,
                message: "commentThreads request rejected".into(),
            }),
            Err(e) => Err(Error::Transport {
                status: 0,
                message: e.to_string(),
            }),
        }
    }
}

pub struct YouTubeClient<H> {
    api_key: String,
    http: H,
    page_size: u32,
}

impl<H: HttpGet> YouTubeClient<H> {
    pub fn new(api_key: impl Into<String>, http: H) -> Self {
        YouTubeClient {
            api_key: api_key.into(),
            http,
            page_size: 100,
        }
    }

    fn page_url(&self, video_id: &str, token: Option<&str>) -> String {
        let mut url = format!(
            "{ENDPOINT}?part=snippet,replies&textFormat=plainText&maxResults={}&videoId={}&key={}",
            self.page_size,
            encode_query(video_id),
            encode_query(&self.api_key)
        );
        if let Some(t) = token {
            url.push_str("&pageToken=");
            url.push_str(&encode_query(t));
        }
        url
    }

    /// All raw page bodies for one video, following `nextPageToken`.
    pub fn fetch_pages(&self, video_id: &str) -> Result<Vec<serde_json::Value>> {
        let mut pages = Vec::new();
        let mut token: Option<String> = None;
        loop {
            let body = self.http.get(&self.page_url(video_id, token.as_deref()))?;
            let value: serde_json::Value = serde_json::from_str(&body)?;
            let page: ThreadPage = serde_json::from_value(value.clone())?;
            pages.push(value);
            match page.next_page_token {
                Some(t) if !t.is_empty() => token = Some(t),
                _ => break,
            }
        }
        Ok(pages)
    }
}

fn encode_query(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                (b as char).to_string()
            }
            _ => format!("%{b:02X}"),
        })
        .collect()
}

/// Maps stored pages to chats. Top-level comments become `main` chats, their
/// replies become `reply` chats pointing at them. When `video_ids` is
/// non-empty, threads of other videos are skipped. Comments whose text is
/// blank are dropped.
pub fn chats_from_pages(pages: &[serde_json::Value], video_ids: &[String]) -> Result<Vec<Chat>> {
    let wanted: HashSet<&str> = video_ids.iter().map(String::as_str).collect();
    let mut chats = Vec::new();
    for value in pages {
        let page: ThreadPage = serde_json::from_value(value.clone())?;
        for thread in page.items {
            let top = &thread.snippet.top_level_comment;
            let video = thread
                .snippet
                .video_id
                .clone()
                .or_else(|| top.snippet.video_id.clone());
            if !wanted.is_empty() && !video.as_deref().is_some_and(|v| wanted.contains(v)) {
                continue;
            }
            let Some(main) = to_chat(top, ForumType::Main, None, video.clone()) else {
                continue;
            };
            let main_id = main.id.clone();
            chats.push(main);
            for reply in thread.replies.iter().flat_map(|r| &r.comments) {
                let parent = reply.snippet.parent_id.clone().unwrap_or_else(|| main_id.clone());
                if parent != main_id {
                    continue;
                }
                chats.extend(to_chat(reply, ForumType::Reply, Some(parent), video.clone()));
            }
        }
    }
    validate_chats(&chats)?;
    Ok(chats)
}

fn to_chat(c: &Comment, kind: ForumType, parent: Option<String>, video: Option<String>) -> Option<Chat> {
    let text = c
        .snippet
        .text_original
        .clone()
        .or_else(|| c.snippet.text_display.clone())?;
    if text.trim().is_empty() {
        return None;
    }
    Some(Chat {
        id: c.id.clone(),
        forum_type: kind,
        parent_id: parent,
        author_id: c.snippet.author_channel_id.as_ref().map(|a| a.value.clone()),
        subject_id: video,
        text,
        timestamp: c.snippet.published_at.clone(),
    })
}

/// Reads a fixture: a JSON array of stored `commentThreads` response bodies.
pub fn read_fixture(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        Error::format(path.display().to_string(), e.line(), "<fixture>", e.to_string())
    })?;
    match value {
        serde_json::Value::Array(pages) => Ok(pages),
        _ => Err(Error::format(
            path.display().to_string(),
            1,
            "<fixture>",
            "expected a JSON array of response pages",
        )),
    }
}

/// Fetches comments either from the live API (key from
/// `BESENT_YOUTUBE_API_KEY`) or from a stored fixture.
pub fn fetch_youtube_comments(
    video_ids: &[String],
    source: FetchSource,
    fixture_path: Option<&Path>,
) -> Result<Vec<Chat>> {
    match source {
        FetchSource::Fixture => {
            let path = fixture_path
                .ok_or_else(|| Error::Config("fixture mode needs a fixture path".into()))?;
            let pages = read_fixture(path)?;
            chats_from_pages(&pages, video_ids).map_err(|e| match e {
                Error::Json(j) => Error::format(path.display().to_string(), 0, "<fixture>", j.to_string()),
                other => other,
            })
        }
        FetchSource::Live => {
            let (_, chats) = fetch_live(video_ids)?;
            Ok(chats)
        }
    }
}

/// Live fetch returning the raw pages too, so they can be stored as a fixture.
pub fn fetch_live(video_ids: &[String]) -> Result<(Vec<serde_json::Value>, Vec<Chat>)> {
    let key = std::env::var(API_KEY_VAR)
        .ok()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Error::Config(format!("live fetch requires {API_KEY_VAR}")))?;
    if video_ids.is_empty() {
        return Err(Error::Config("live fetch needs at least one video id".into()));
    }
    let client = YouTubeClient::new(key, UreqHttp);
    let mut pages = Vec::new();
    for v in video_ids {
        pages.extend(client.fetch_pages(v)?);
    }
    let chats = chats_from_pages(&pages, video_ids)?;
    Ok((pages, chats))
}
