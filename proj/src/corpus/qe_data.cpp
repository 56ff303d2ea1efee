#include "qe/corpus/qe_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

namespace qe::corpus {

const char* tag_name(Tag t) { return t == Tag::ok ? "OK" : "BAD"; }

Tag parse_tag(const std::string& s) {
  if (s == "OK") return Tag::ok;
  if (s == "BAD") return Tag::bad;
  throw std::invalid_argument("unknown tag '" + s + "'");
}

Corruption corrupt(const Sentence& pe, const CorruptionRates& rates, const Sentence& pool, std::uint64_t seed) {
  auto in_unit = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!in_unit(rates.substitute) || !in_unit(rates.remove) || !in_unit(rates.insert) ||
      rates.substitute + rates.remove > 1.0 || rates.insert >= 1.0) {
    throw std::invalid_argument("corrupt: rates must lie in [0,1] with substitute + remove <= 1 and insert < 1");
  }
  if (pool.size() < 2 && (rates.substitute > 0.0 || rates.insert > 0.0 || rates.remove > 0.0)) {
    throw std::invalid_argument("corrupt: replacement pool needs at least 2 words");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, pool.empty() ? 0 : pool.size() - 1);
  auto other_than = [&](const std::string& w) {
    for (;;) {
      const auto& c = pool[pick(rng)];
      if (c != w) return c;
    }
  };

  Corruption out;
  std::vector<std::size_t> bad_gaps;
  for (const auto& w : pe) {
    if (unit(rng) < rates.insert) {
      out.mt.push_back(pool[pick(rng)]);
      out.word_tags.push_back(Tag::bad);
    }
    const double u = unit(rng);
    if (u < rates.substitute) {
      out.mt.push_back(other_than(w));
      out.word_tags.push_back(Tag::bad);
    } else if (u < rates.substitute + rates.remove) {
      bad_gaps.push_back(out.mt.size());
    } else {
      out.mt.push_back(w);
      out.word_tags.push_back(Tag::ok);
    }
  }
  if (out.mt.empty()) {
    out.mt.push_back(pool[pick(rng)]);
    out.word_tags.push_back(Tag::bad);
  }
  out.gap_tags.assign(out.mt.size() + 1, Tag::ok);
  for (auto g : bad_gaps) out.gap_tags[g] = Tag::bad;
  return out;
}

std::size_t edit_distance(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t diag = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({diag, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double compute_hter(const Sentence& mt, const Sentence& pe) {
  if (mt.empty()) throw std::invalid_argument("compute_hter: empty translation");
  const double h = static_cast<double>(edit_distance(mt, pe)) / static_cast<double>(mt.size());
  return std::clamp(h, 0.0, 1.0);
}

QEDataset make_qe_dataset(const std::vector<ParallelPair>& pairs, const CorruptionConfig& config, const Sentence& pool,
                          std::uint64_t seed) {
  if (pairs.empty()) throw std::invalid_argument("make_qe_dataset: no pairs");
  if (config.train_fraction < 0 || config.dev_fraction < 0 || config.train_fraction + config.dev_fraction > 1.0) {
    throw std::invalid_argument("make_qe_dataset: split fractions must be non-negative and sum to at most 1");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<QESample> all;
  all.reserve(pairs.size());
  for (const auto& pair : pairs) {
    CorruptionRates rates = config.rates;
    if (config.vary_severity) {
      const double scale = 2.0 * unit(rng);
      rates.substitute = std::min(1.0, rates.substitute * scale);
      rates.remove = std::min(1.0 - rates.substitute, rates.remove * scale);
      rates.insert = std::min(0.99, rates.insert * scale);
    }
    auto c = corrupt(pair.target, rates, pool, rng());
    QESample s;
    s.source = pair.source;
    s.pe = pair.target;
    s.hter = std::round(compute_hter(c.mt, s.pe) * 1e4) / 1e4;
    s.mt = std::move(c.mt);
    s.word_tags = std::move(c.word_tags);
    s.gap_tags = std::move(c.gap_tags);
    all.push_back(std::move(s));
  }
  const std::size_t n = all.size();
  const auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(n)));
  const auto n_dev =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(config.dev_fraction * static_cast<double>(n))));
  QEDataset ds;
  ds.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + n_train));
  ds.dev.assign(std::make_move_iterator(all.begin() + n_train), std::make_move_iterator(all.begin() + n_train + n_dev));
  ds.test.assign(std::make_move_iterator(all.begin() + n_train + n_dev), std::make_move_iterator(all.end()));
  return ds;
}

SplitStats split_stats(const std::vector<QESample>& samples) {
  SplitStats st;
  st.samples = samples.size();
  if (samples.empty()) return st;
  std::size_t words = 0, bad_words = 0, gaps = 0, bad_gaps = 0, src = 0;
  st.min_hter = 1.0;
  for (const auto& s : samples) {
    src += s.source.size();
    words += s.word_tags.size();
    gaps += s.gap_tags.size();
    bad_words += static_cast<std::size_t>(std::count(s.word_tags.begin(), s.word_tags.end(), Tag::bad));
    bad_gaps += static_cast<std::size_t>(std::count(s.gap_tags.begin(), s.gap_tags.end(), Tag::bad));
    st.avg_hter += s.hter;
    st.min_hter = std::min(st.min_hter, s.hter);
    st.max_hter = std::max(st.max_hter, s.hter);
  }
  const auto n = static_cast<double>(samples.size());
  st.avg_source_length = static_cast<double>(src) / n;
  st.avg_mt_length = static_cast<double>(words) / n;
  st.avg_hter /= n;
  st.bad_word_ratio = words ? static_cast<double>(bad_words) / static_cast<double>(words) : 0.0;
  st.bad_gap_ratio = gaps ? static_cast<double>(bad_gaps) / static_cast<double>(gaps) : 0.0;
  return st;
}

void validate_sample(const QESample& s) {
  if (s.word_tags.size() != s.mt.size()) {
    throw std::invalid_argument(std::to_string(s.mt.size()) + " mt words but " + std::to_string(s.word_tags.size()) +
                                " word tags");
  }
  if (s.gap_tags.size() != s.mt.size() + 1) {
    throw std::invalid_argument(std::to_string(s.mt.size()) + " mt words need " + std::to_string(s.mt.size() + 1) +
                                " gap tags, got " + std::to_string(s.gap_tags.size()));
  }
  if (!(s.hter >= 0.0 && s.hter <= 1.0)) throw std::invalid_argument("hter outside [0,1]");
}

Sentence split_words(const std::string& line) {
  Sentence out;
  std::istringstream in(line);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join_words(const Sentence& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::vector<Sentence> read_sentences(const std::filesystem::path& file) {
  std::vector<Sentence> out;
  for (const auto& line : read_lines(file)) out.push_back(split_words(line));
  return out;
}

void write_sentences(const std::filesystem::path& file, const std::vector<Sentence>& sentences) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  for (const auto& s : sentences) out << join_words(s) << '\n';
}

namespace {

std::vector<Sentence> read_expect(const std::filesystem::path& file, std::size_t n) {
  auto s = read_sentences(file);
  if (s.size() != n) {
    throw std::invalid_argument(file.string() + ": " + std::to_string(s.size()) + " lines, expected " +
                                std::to_string(n));
  }
  return s;
}

std::vector<Tag> parse_tag_line(const Sentence& line, const std::filesystem::path& file, std::size_t line_no) {
  std::vector<Tag> tags;
  for (const auto& t : line) {
    try {
      tags.push_back(parse_tag(t));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(file.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return tags;
}

std::string format_hter(double h) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << h;
  return os.str();
}

}  // namespace

void save_qe_files(const std::filesystem::path& dir, const std::vector<QESample>& samples) {
  std::filesystem::create_directories(dir);
  bool all_pe = !samples.empty();
  for (const auto& s : samples) {
    validate_sample(s);
    all_pe = all_pe && !s.pe.empty();
  }
  std::ofstream src(dir / "src.txt", std::ios::binary), mt(dir / "mt.txt", std::ios::binary),
      hter(dir / "hter.txt", std::ios::binary), wt(dir / "word_tags.txt", std::ios::binary),
      gt(dir / "gap_tags.txt", std::ios::binary);
  std::ofstream pe;
  if (all_pe) pe.open(dir / "pe.txt", std::ios::binary);
  else std::filesystem::remove(dir / "pe.txt");
  auto write_tags = [](std::ofstream& out, const std::vector<Tag>& tags) {
    for (std::size_t i = 0; i < tags.size(); ++i) out << (i ? " " : "") << tag_name(tags[i]);
    out << '\n';
  };
  for (const auto& s : samples) {
    src << join_words(s.source) << '\n';
    mt << join_words(s.mt) << '\n';
    if (all_pe) pe << join_words(s.pe) << '\n';
    hter << format_hter(s.hter) << '\n';
    write_tags(wt, s.word_tags);
    write_tags(gt, s.gap_tags);
  }
  if (!src || !mt || !hter || !wt || !gt) throw std::runtime_error("failed writing dataset to " + dir.string());
}

std::vector<QESample> load_qe_files(const std::filesystem::path& dir) {
  const auto src = read_sentences(dir / "src.txt");
  const std::size_t n = src.size();
  const auto mt = read_expect(dir / "mt.txt", n);
  const auto hter = read_lines(dir / "hter.txt");
  if (hter.size() != n) throw std::invalid_argument((dir / "hter.txt").string() + ": line count mismatch");
  const auto wt = read_expect(dir / "word_tags.txt", n);
  const auto gt = read_expect(dir / "gap_tags.txt", n);
  std::vector<Sentence> pe;
  if (std::filesystem::exists(dir / "pe.txt")) pe = read_expect(dir / "pe.txt", n);

  std::vector<QESample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t line_no = i + 1;
    auto& s = out[i];
    s.source = src[i];
    s.mt = mt[i];
    if (!pe.empty()) s.pe = pe[i];
    s.word_tags = parse_tag_line(wt[i], dir / "word_tags.txt", line_no);
    s.gap_tags = parse_tag_line(gt[i], dir / "gap_tags.txt", line_no);
    try {
      std::size_t used = 0;
      s.hter = std::stod(hter[i], &used);
      if (used != hter[i].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::invalid_argument((dir / "hter.txt").string() + " line " + std::to_string(line_no) +
                                  ": not a number: '" + hter[i] + "'");
    }
    try {
      validate_sample(s);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(dir.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_parallel(const std::filesystem::path& dir, const std::vector<ParallelPair>& pairs) {
  std::filesystem::create_directories(dir);
  std::vector<Sentence> src, tgt;
  bool styled = !pairs.empty();
  for (const auto& p : pairs) {
    src.push_back(p.source);
    tgt.push_back(p.target);
    styled = styled && p.style.has_value();
  }
  write_sentences(dir / "src.txt", src);
  write_sentences(dir / "tgt.txt", tgt);
  if (styled) {
    std::ofstream st(dir / "style.txt", std::ios::binary);
    for (const auto& p : pairs) st << *p.style << '\n';
  } else {
    std::filesystem::remove(dir / "style.txt");
  }
}

std::vector<ParallelPair> load_parallel(const std::filesystem::path& dir) {
  const auto src = read_sentences(dir / "src.txt");
  const auto tgt = read_expect(dir / "tgt.txt", src.size());
  std::vector<std::string> styles;
  if (std::filesystem::exists(dir / "style.txt")) {
    styles = read_lines(dir / "style.txt");
    if (styles.size() != src.size()) throw std::invalid_argument((dir / "style.txt").string() + ": line count mismatch");
  }
  std::vector<ParallelPair> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[i].source = src[i];
    out[i].target = tgt[i];
    if (!styles.empty()) out[i].style = static_cast<std::size_t>(std::stoul(styles[i]));
  }
  return out;
}

}  // namespace qe::corpus
