//! Foundation-wide announcement board. Only admins post or delete; every
//! authenticated user reads.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::access::UserContext;
use crate::error::{Error, Result};
use crate::ids::{NewsId, UserId};
use crate::query::Page;
use crate::registry::Registry;
use crate::store::Mutation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub news_id: NewsId,
    pub title: String,
    pub body: String,
    pub author: UserId,
    pub created_at: DateTime<Utc>,
}

impl Registry {
    pub fn add_news(&self, admin: &UserContext, title: &str, body: &str) -> Result<NewsItem> {
        admin.require_admin()?;
        if title.trim().is_empty() {
            return Err(Error::validation("title"));
        }
        let now = self.clock().now();
        self.store().write(now, |tx| {
            let item = NewsItem {
                news_id: tx.next_news_id(),
                title: title.to_owned(),
                body: body.to_owned(),
                author: admin.user_id(),
                created_at: now,
            };
            tx.stage(Mutation::PutNews(item.clone()))?;
            Ok(item)
        })
    }

    /// Newest first; ties on `created_at` go to the later id.
    pub fn list_news(&self, _viewer: &UserContext, page: u32, page_size: Option<u32>) -> Result<Page<NewsItem>> {
        let page_size = self.config().resolve_page_size(page_size)?;
        Ok(self.store().read(|t| {
            let mut items: Vec<&NewsItem> = t.news().collect();
            items.sort_by_key(|n| std::cmp::Reverse((n.created_at, n.news_id)));
            Page::slice(items.into_iter().cloned(), page, page_size)
        }))
    }

    pub fn delete_news(&self, admin: &UserContext, news_id: NewsId) -> Result<()> {
        admin.require_admin()?;
        self.store()
            .write(self.clock().now(), |tx| tx.stage(Mutation::RemoveNews(news_id)))
    }
}
