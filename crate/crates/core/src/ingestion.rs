//! Line-delimited corpus files, stratified splits and corpus statistics.
//!
//! Every file holds one JSON object per line:
//!
//! * users: `{"id", "description", "target", "label"?, "followee_ids": []}`
//! * tweets: `{"id", "author_id", "text"}`
//! * edges: `{"src_user_id", "dst_user_id"}` meaning src follows dst
//! * splits: `{"target", "seed", "train": [], "val": [], "test": []}`

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datamodel::{StanceLabel, TargetId, Tweet, User, UserRole};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UserRecord {
    id: String,
    #[serde(default)]
    description: String,
    target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    followee_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeRecord {
    src_user_id: String,
    dst_user_id: String,
}

/// A loaded and cross-validated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub users: Vec<User>,
    pub tweets: Vec<Tweet>,
}

impl Corpus {
    pub fn user(&self, id: &str) -> Option<&User> {
        self.users.iter().find(|u| u.id == id)
    }

    pub fn targets(&self) -> Vec<TargetId> {
        let mut t: Vec<TargetId> = self.users.iter().map(|u| u.target.clone()).collect();
        t.sort();
        t.dedup();
        t
    }
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads a JSON-lines file, skipping blank lines. Yields `(line_number, record)`.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            file: file_label(path),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub(crate) fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(users_path: &Path, tweets_path: &Path, edges_path: &Path) -> Result<Corpus> {
    let user_records: Vec<(usize, UserRecord)> = read_jsonl(users_path)?;
    if user_records.is_empty() {
        return Err(Error::NoUsers);
    }
    let tweet_records: Vec<(usize, Tweet)> = read_jsonl(tweets_path)?;
    let edge_records: Vec<(usize, EdgeRecord)> = read_jsonl(edges_path)?;

    let mut users = Vec::with_capacity(user_records.len());
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, rec) in user_records {
        let label = match rec.label.as_deref() {
            None => None,
            Some(s) => Some(s.parse().map_err(|_| Error::InvalidLabel { line })?),
        };
        let target = TargetId::new(&rec.target).map_err(|_| Error::Malformed {
            file: file_label(users_path),
            line,
            message: format!("invalid target {:?}", rec.target),
        })?;
        if index.insert(rec.id.clone(), users.len()).is_some() {
            return Err(Error::DuplicateId { kind: "user", id: rec.id });
        }
        users.push(User {
            id: rec.id,
            description: rec.description,
            tweet_ids: Vec::new(),
            followee_ids: rec.followee_ids,
            role: UserRole::Isolated,
            label,
            target,
        });
    }

    let mut tweet_ids = HashSet::new();
    let mut tweets = Vec::with_capacity(tweet_records.len());
    for (line, t) in tweet_records {
        if !tweet_ids.insert(t.id.clone()) {
            return Err(Error::DuplicateId { kind: "tweet", id: t.id });
        }
        if t.text.is_empty() && !t.degenerate {
            return Err(Error::Malformed {
                file: file_label(tweets_path),
                line,
                message: format!("tweet {} has empty text but is not flagged degenerate", t.id),
            });
        }
        let author = *index
            .get(&t.author_id)
            .ok_or_else(|| Error::DanglingUser(t.author_id.clone()))?;
        users[author].tweet_ids.push(t.id.clone());
        tweets.push(t);
    }

    for (line, e) in edge_records {
        let src = *index
            .get(&e.src_user_id)
            .ok_or_else(|| Error::DanglingUser(e.src_user_id.clone()))?;
        if !index.contains_key(&e.dst_user_id) {
            return Err(Error::DanglingUser(e.dst_user_id));
        }
        if e.src_user_id == e.dst_user_id {
            return Err(Error::Malformed {
                file: file_label(edges_path),
                line,
                message: format!("user {} follows itself", e.src_user_id),
            });
        }
        users[src].followee_ids.push(e.dst_user_id);
    }

    for u in &mut users {
        let mut seen = HashSet::new();
        u.followee_ids.retain(|f| seen.insert(f.clone()));
        if let Some(f) = u.followee_ids.iter().find(|f| !index.contains_key(*f)) {
            return Err(Error::DanglingUser(f.clone()));
        }
    }
    assign_roles(&mut users);
    Ok(Corpus { users, tweets })
}

/// Follower if the user follows anyone, else followee if followed, else isolated.
pub(crate) fn assign_roles(users: &mut [User]) {
    let followed: HashSet<String> = users.iter().flat_map(|u| u.followee_ids.iter().cloned()).collect();
    for u in users.iter_mut() {
        u.role = if !u.followee_ids.is_empty() {
            UserRole::Follower
        } else if followed.contains(&u.id) {
            UserRole::Followee
        } else {
            UserRole::Isolated
        };
    }
}

/// Writes the corpus in the same three-file layout `load_corpus` reads.
/// Follow relations go to the edges file only.
pub fn save_corpus(corpus: &Corpus, users_path: &Path, tweets_path: &Path, edges_path: &Path) -> Result<()> {
    let records: Vec<UserRecord> = corpus
        .users
        .iter()
        .map(|u| UserRecord {
            id: u.id.clone(),
            description: u.description.clone(),
            target: u.target.to_string(),
            label: u.label.map(|l| l.as_str().to_string()),
            followee_ids: Vec::new(),
        })
        .collect();
    let edges: Vec<EdgeRecord> = corpus
        .users
        .iter()
        .flat_map(|u| {
            u.followee_ids.iter().map(|f| EdgeRecord {
                src_user_id: u.id.clone(),
                dst_user_id: f.clone(),
            })
        })
        .collect();
    write_jsonl(users_path, &records)?;
    write_jsonl(tweets_path, &corpus.tweets)?;
    write_jsonl(edges_path, &edges)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub target: TargetId,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Stratified 70/15/15 split of the labeled users of `target`.
///
/// Within each class of size `c` the training part gets `floor(0.7c)`
/// members, validation `floor(0.15c)` and test the remainder.
pub fn split_dataset(users: &[User], target: &TargetId, seed: u64) -> Result<DatasetSplit> {
    let mut by_class: BTreeMap<StanceLabel, Vec<String>> = BTreeMap::new();
    for u in users.iter().filter(|u| &u.target == target) {
        if let Some(l) = u.label {
            by_class.entry(l).or_default().push(u.id.clone());
        }
    }
    if by_class.is_empty() {
        return Err(Error::EmptyInput("no labeled users for target"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (label, mut ids) in by_class {
        let c = ids.len();
        if c < 3 {
            return Err(Error::Stratify {
                label: label.to_string(),
                count: c,
            });
        }
        ids.sort();
        ids.shuffle(&mut rng);
        let n_train = c * 70 / 100;
        let n_val = c * 15 / 100;
        let mut rest = ids.into_iter();
        train.extend(rest.by_ref().take(n_train));
        val.extend(rest.by_ref().take(n_val));
        test.extend(rest);
    }
    train.sort();
    val.sort();
    test.sort();
    Ok(DatasetSplit {
        target: target.clone(),
        seed,
        train,
        val,
        test,
    })
}

pub fn write_splits(path: &Path, splits: &[DatasetSplit]) -> Result<()> {
    write_jsonl(path, splits)
}

pub fn read_splits(path: &Path) -> Result<Vec<DatasetSplit>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, s)| s).collect())
}

/// Rounds a percentage to two decimals, halves away from zero.
///
/// The value is first snapped to 1e-9 so binary noise such as
/// `84.18499999999999` still rounds up.
pub fn round_pct(x: f64) -> f64 {
    let snapped = (x * 1e9).round() / 1e9;
    (snapped * 100.0).round() / 100.0
}

pub fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        round_pct(100.0 * count as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub users: usize,
    pub tweets: usize,
    pub unlabeled: usize,
    pub label_counts: BTreeMap<StanceLabel, usize>,
    /// Percentages over labeled users.
    pub label_pct: BTreeMap<StanceLabel, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub tweets: usize,
    pub per_target: BTreeMap<TargetId, TargetStats>,
    pub user_role_pct: BTreeMap<UserRole, f64>,
    /// Share of tweets written by users of each role.
    pub tweet_role_pct: BTreeMap<UserRole, f64>,
}

pub fn corpus_stats(users: &[User], tweets: &[Tweet]) -> CorpusStats {
    let role_of: HashMap<&str, (UserRole, &TargetId)> = users
        .iter()
        .map(|u| (u.id.as_str(), (u.role, &u.target)))
        .collect();

    let mut per_target: BTreeMap<TargetId, TargetStats> = BTreeMap::new();
    for u in users {
        let s = per_target.entry(u.target.clone()).or_insert_with(|| TargetStats {
            users: 0,
            tweets: 0,
            unlabeled: 0,
            label_counts: StanceLabel::ALL.iter().map(|&l| (l, 0)).collect(),
            label_pct: BTreeMap::new(),
        });
        s.users += 1;
        match u.label {
            Some(l) => *s.label_counts.entry(l).or_default() += 1,
            None => s.unlabeled += 1,
        }
    }

    let mut role_users: BTreeMap<UserRole, usize> = UserRole::ALL.iter().map(|&r| (r, 0)).collect();
    for u in users {
        *role_users.entry(u.role).or_default() += 1;
    }
    let mut role_tweets: BTreeMap<UserRole, usize> = UserRole::ALL.iter().map(|&r| (r, 0)).collect();
    for t in tweets {
        if let Some((role, target)) = role_of.get(t.author_id.as_str()) {
            *role_tweets.entry(*role).or_default() += 1;
            if let Some(s) = per_target.get_mut(*target) {
                s.tweets += 1;
            }
        }
    }

    for s in per_target.values_mut() {
        let labeled = s.users - s.unlabeled;
        s.label_pct = s
            .label_counts
            .iter()
            .map(|(&l, &c)| (l, percent(c, labeled)))
            .collect();
    }

    CorpusStats {
        users: users.len(),
        tweets: tweets.len(),
        per_target,
        user_role_pct: role_users
            .iter()
            .map(|(&r, &c)| (r, percent(c, users.len())))
            .collect(),
        tweet_role_pct: role_tweets
            .iter()
            .map(|(&r, &c)| (r, percent(c, tweets.len())))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    struct Files {
        _dir: tempfile::TempDir,
        users: PathBuf,
        tweets: PathBuf,
        edges: PathBuf,
    }

    fn files(users: &str, tweets: &str, edges: &str) -> Files {
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str, body: &str| {
            let path = dir.path().join(n);
            fs::write(&path, body).unwrap();
            path
        };
        Files {
            users: p("users.jsonl", users),
            tweets: p("tweets.jsonl", tweets),
            edges: p("edges.jsonl", edges),
            _dir: dir,
        }
    }

    fn load(f: &Files) -> Result<Corpus> {
        load_corpus(&f.users, &f.tweets, &f.edges)
    }

    #[test]
    fn empty_users_file() {
        let f = files("", "", "");
        assert_eq!(load(&f).unwrap_err().to_string(), "no users");
    }

    #[test]
    fn roles_follow_edges() {
        let f = files(
            concat!(
                r#"{"id":"A","description":"","target":"biden"}"#, "\n",
                r#"{"id":"B","description":"","target":"biden"}"#, "\n",
                r#"{"id":"C","description":"","target":"biden"}"#, "\n",
            ),
            "",
            r#"{"src_user_id":"A","dst_user_id":"B"}"#,
        );
        let c = load(&f).unwrap();
        let role = |id: &str| c.user(id).unwrap().role;
        assert_eq!(role("A"), UserRole::Follower);
        assert_eq!(role("B"), UserRole::Followee);
        assert_eq!(role("C"), UserRole::Isolated);
        assert_eq!(c.user("A").unwrap().followee_ids, vec!["B".to_string()]);
    }

    #[test]
    fn unknown_label_reports_line() {
        let f = files(
            concat!(
                r#"{"id":"A","target":"biden","label":"favor"}"#, "\n",
                r#"{"id":"B","target":"biden","label":"pro"}"#, "\n",
            ),
            "",
            "",
        );
        assert_eq!(load(&f).unwrap_err().to_string(), "invalid label at line 2");
    }

    #[test]
    fn malformed_line_and_duplicates() {
        let f = files("{\"id\":\"A\",\"target\":\"b\"}\n{not json\n", "", "");
        assert!(matches!(load(&f).unwrap_err(), Error::Malformed { line: 2, .. }));

        let f = files(
            "{\"id\":\"A\",\"target\":\"b\"}\n{\"id\":\"A\",\"target\":\"b\"}\n",
            "",
            "",
        );
        assert!(matches!(load(&f).unwrap_err(), Error::DuplicateId { kind: "user", .. }));
    }

    #[test]
    fn tweets_attach_in_file_order() {
        let f = files(
            "{\"id\":\"A\",\"target\":\"b\"}\n",
            concat!(
                r#"{"id":"t2","author_id":"A","text":"second"}"#, "\n",
                r#"{"id":"t1","author_id":"A","text":"first"}"#, "\n",
            ),
            "",
        );
        let c = load(&f).unwrap();
        assert_eq!(c.users[0].tweet_ids, vec!["t2", "t1"]);
    }

    #[test]
    fn empty_tweet_requires_flag() {
        let f = files(
            "{\"id\":\"A\",\"target\":\"b\"}\n",
            r#"{"id":"t","author_id":"A","text":""}"#,
            "",
        );
        assert!(load(&f).is_err());
        let f = files(
            "{\"id\":\"A\",\"target\":\"b\"}\n",
            r#"{"id":"t","author_id":"A","text":"","degenerate":true}"#,
            "",
        );
        assert!(load(&f).is_ok());
    }

    fn labeled(n: usize, label: StanceLabel) -> Vec<User> {
        (0..n)
            .map(|i| User {
                id: format!("{label}{i:05}"),
                description: String::new(),
                tweet_ids: vec![],
                followee_ids: vec![],
                role: UserRole::Isolated,
                label: Some(label),
                target: TargetId::new("biden").unwrap(),
            })
            .collect()
    }

    #[test]
    fn split_sizes_floor_floor_remainder() {
        let t = TargetId::new("biden").unwrap();
        let s = split_dataset(&labeled(20, StanceLabel::Favor), &t, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (14, 3, 3));

        let s = split_dataset(&labeled(6884, StanceLabel::Against), &t, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (4818, 1032, 1034));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let t = TargetId::new("biden").unwrap();
        let mut users = labeled(30, StanceLabel::Favor);
        users.extend(labeled(12, StanceLabel::None));
        let a = split_dataset(&users, &t, 3).unwrap();
        let b = split_dataset(&users, &t, 3).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&users, &t, 4).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn tiny_class_cannot_be_stratified() {
        let t = TargetId::new("biden").unwrap();
        let mut users = labeled(30, StanceLabel::Favor);
        users.extend(labeled(2, StanceLabel::Against));
        assert!(matches!(
            split_dataset(&users, &t, 0).unwrap_err(),
            Error::Stratify { count: 2, .. }
        ));
    }

    #[test]
    fn label_percentages_match_published_distribution() {
        let mut users = labeled(1360, StanceLabel::Against);
        users.extend(labeled(4110, StanceLabel::Favor));
        users.extend(labeled(1414, StanceLabel::None));
        let stats = corpus_stats(&users, &[]);
        let s = &stats.per_target[&TargetId::new("biden").unwrap()];
        assert_eq!(s.label_pct[&StanceLabel::Against], 19.76);
        assert_eq!(s.label_pct[&StanceLabel::Favor], 59.70);
        assert_eq!(s.label_pct[&StanceLabel::None], 20.54);
        assert_eq!(s.label_counts.values().sum::<usize>() + s.unlabeled, s.users);
    }

    #[test]
    fn degenerate_stats() {
        let users = labeled(1, StanceLabel::Favor);
        let stats = corpus_stats(&users, &[]);
        let s = stats.per_target.values().next().unwrap();
        assert_eq!(s.label_pct[&StanceLabel::Favor], 100.0);
        assert!(stats.tweet_role_pct.values().all(|&p| p == 0.0));
    }

    #[test]
    fn half_up_rounding_survives_binary_noise() {
        assert_eq!(round_pct(84.185), 84.19);
        assert_eq!(round_pct(100.0 * (0.8880 + 0.7957) / 2.0), 84.19);
        assert_eq!(round_pct(19.755_868), 19.76);
    }
}
