#include "popevo/persistence.hpp"

#include "popevo/digest.hpp"
#include "popevo/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace popevo {

using nlohmann::json;

namespace {

constexpr std::array<std::uint8_t, 8> kMagic = {'P', 'O', 'P', 'E', 'V', 'O', 'C', 'K'};

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i)
            bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s)
    {
        u64(s.size());
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
    void vec(std::span<const double> v)
    {
        u64(v.size());
        for (double x : v)
            f64(x);
    }

    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    std::uint8_t u8()
    {
        need(1);
        return b_[pos_++];
    }
    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64()
    {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::uint64_t count()
    {
        const std::uint64_t n = u64();
        if (n > b_.size())
            throw Error(ErrorCode::CorruptCheckpoint, "implausible element count");
        return n;
    }
    std::string str()
    {
        const std::uint64_t n = count();
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::vector<double> vec()
    {
        const std::uint64_t n = count();
        std::vector<double> v(n);
        for (auto& x : v)
            x = f64();
        return v;
    }
    std::span<const std::uint8_t> raw(std::size_t n)
    {
        need(n);
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const noexcept { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const
    {
        if (b_.size() - pos_ < n)
            throw Error(ErrorCode::CorruptCheckpoint, "checkpoint is truncated");
    }

    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

void put_genome(Writer& w, const Genome& g)
{
    w.u64(g.id);
    w.u64(g.birth_generation);
    w.vec(g.weights.values());
    w.u8(static_cast<std::uint8_t>(g.lineage.origin));
    w.u64(g.lineage.parent_ids.size());
    for (GenomeId p : g.lineage.parent_ids)
        w.u64(p);
    w.u64(g.lineage.op_params.size());
    for (const auto& [k, v] : g.lineage.op_params) {
        w.str(k);
        w.f64(v);
    }
}

Genome get_genome(Reader& r)
{
    Genome g;
    g.id = r.u64();
    g.birth_generation = r.u64();
    try {
        g.weights = WeightVector(r.vec());
    } catch (const Error& e) {
        throw Error(ErrorCode::CorruptCheckpoint, e.what());
    }
    const std::uint8_t origin = r.u8();
    if (origin > static_cast<std::uint8_t>(Origin::SelectionCopy))
        throw Error(ErrorCode::CorruptCheckpoint, "bad lineage origin");
    g.lineage.origin = static_cast<Origin>(origin);
    const std::uint64_t np = r.count();
    for (std::uint64_t i = 0; i < np; ++i)
        g.lineage.parent_ids.push_back(r.u64());
    const std::uint64_t nk = r.count();
    for (std::uint64_t i = 0; i < nk; ++i) {
        std::string k = r.str();
        g.lineage.op_params[k] = r.f64();
    }
    return g;
}

void put_reference(Writer& w, const std::optional<Reference>& ref)
{
    w.u8(ref ? 1 : 0);
    if (!ref)
        return;
    put_genome(w, ref->genome);
    w.f64(ref->fitness);
    w.vec(ref->experience);
}

std::optional<Reference> get_reference(Reader& r)
{
    if (r.u8() == 0)
        return std::nullopt;
    Reference ref;
    ref.genome = get_genome(r);
    ref.fitness = r.f64();
    ref.experience = r.vec();
    return ref;
}

void put_prediction(Writer& w, const Prediction& p)
{
    if (const auto* i = std::get_if<std::int64_t>(&p)) {
        w.u8(0);
        w.u64(static_cast<std::uint64_t>(*i));
    } else if (const auto* d = std::get_if<double>(&p)) {
        w.u8(1);
        w.f64(*d);
    } else {
        w.u8(2);
        w.str(std::get<std::string>(p));
    }
}

Prediction get_prediction(Reader& r)
{
    switch (r.u8()) {
    case 0: return Prediction{static_cast<std::int64_t>(r.u64())};
    case 1: return Prediction{r.f64()};
    case 2: return Prediction{r.str()};
    default: throw Error(ErrorCode::CorruptCheckpoint, "bad prediction tag");
    }
}

void put_predictions(Writer& w, const std::vector<Prediction>& ps)
{
    w.u64(ps.size());
    for (const auto& p : ps)
        put_prediction(w, p);
}

std::vector<Prediction> get_predictions(Reader& r)
{
    const std::uint64_t n = r.count();
    std::vector<Prediction> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i)
        out.push_back(get_prediction(r));
    return out;
}

void put_report(Writer& w, const IterationReport& rep)
{
    w.u64(rep.generation);
    w.u64(rep.pool_size_after_crossover);
    w.u64(rep.pool_size_after_mutation);
    w.f64(rep.best_fitness);
    w.f64(rep.mean_fitness);
    w.f64(rep.topk_mean_fitness);
    w.f64(rep.wall_clock_seconds);
    w.u64(rep.evaluation_count);
    w.u64(rep.cache_hit_count);
}

IterationReport get_report(Reader& r)
{
    IterationReport rep;
    rep.generation = r.u64();
    rep.pool_size_after_crossover = r.u64();
    rep.pool_size_after_mutation = r.u64();
    rep.best_fitness = r.f64();
    rep.mean_fitness = r.f64();
    rep.topk_mean_fitness = r.f64();
    rep.wall_clock_seconds = r.f64();
    rep.evaluation_count = r.u64();
    rep.cache_hit_count = r.u64();
    return rep;
}

} // namespace

Checkpoint capture_checkpoint(const EngineState& state, const Evaluator& evaluator, bool include_cache)
{
    Checkpoint ckpt;
    ckpt.state = state;
    ckpt.evaluations = evaluator.evaluations();
    ckpt.cache_hits = evaluator.cache_hits();
    if (include_cache) {
        auto& cache = const_cast<Evaluator&>(evaluator).cache();
        ckpt.cache = CacheSnapshot{cache.snapshot(), cache.hits(), cache.misses()};
    }
    return ckpt;
}

void restore_evaluator(const Checkpoint& ckpt, Evaluator& evaluator)
{
    evaluator.restore_counters(ckpt.evaluations, ckpt.cache_hits);
    if (ckpt.cache)
        evaluator.cache().restore(ckpt.cache->entries, ckpt.cache->hits, ckpt.cache->misses);
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt)
{
    Writer p;
    const EngineState& s = ckpt.state;
    p.str(to_json(s.config).dump());
    p.u64(s.generation);

    p.u64(s.population.generation);
    p.u64(s.population.target_size);
    p.u64(s.population.members.size());
    for (const Member& m : s.population.members) {
        put_genome(p, m.genome);
        p.u8(m.fitness ? 1 : 0);
        p.f64(m.fitness.value_or(0.0));
    }

    p.u64(s.experience.per_genome.size());
    for (const auto& [id, e] : s.experience.per_genome) {
        p.u64(id);
        p.vec(e);
    }
    put_reference(p, s.experience.global_best);
    put_reference(p, s.experience.current_best);
    put_reference(p, s.experience.global_worst);

    p.raw(s.rng.save_state());
    p.u64(s.next_id);
    p.u64(s.log.size());
    for (const auto& rep : s.log)
        put_report(p, rep);

    p.u64(ckpt.evaluations);
    p.u64(ckpt.cache_hits);
    p.u8(ckpt.cache ? 1 : 0);
    if (ckpt.cache) {
        p.u64(ckpt.cache->hits);
        p.u64(ckpt.cache->misses);
        p.u64(ckpt.cache->entries.size());
        for (const auto& [key, out] : ckpt.cache->entries) {
            p.raw(key.digest);
            // evaluation_cost is wall time; leaving it out keeps checkpoints reproducible.
            p.f64(out.fitness);
            p.u64(out.per_task.size());
            for (const auto& tp : out.per_task) {
                p.str(tp.task_id);
                put_predictions(p, tp.predictions);
                put_predictions(p, tp.labels);
            }
        }
    }

    Writer file;
    file.raw(kMagic);
    file.u32(kCheckpointVersion);
    file.u64(p.bytes().size());
    file.raw(p.bytes());
    Digest<32> digest;
    digest.update(file.bytes());
    file.raw(digest.finish());
    return std::move(file.bytes());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes)
{
    constexpr std::size_t kHeader = 8 + 4 + 8;
    if (bytes.size() < kHeader + 32)
        throw Error(ErrorCode::CorruptCheckpoint, "checkpoint is truncated");
    if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
        throw Error(ErrorCode::CorruptCheckpoint, "not a checkpoint file");
    Reader head(bytes.subspan(8, 12));
    const std::uint32_t version = head.u32();
    const std::uint64_t payload_len = head.u64();
    if (payload_len != bytes.size() - kHeader - 32)
        throw Error(ErrorCode::CorruptCheckpoint, "checkpoint length does not match its header");
    Digest<32> digest;
    digest.update(bytes.first(bytes.size() - 32));
    const auto expect = digest.finish();
    if (!std::equal(expect.begin(), expect.end(), bytes.end() - 32))
        throw Error(ErrorCode::CorruptCheckpoint, "checkpoint digest mismatch");
    if (version != kCheckpointVersion)
        throw Error(ErrorCode::VersionMismatch,
                    "checkpoint format " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));

    Reader r(bytes.subspan(kHeader, payload_len));
    Checkpoint ckpt;
    EngineState& s = ckpt.state;
    try {
        s.config = config_from_json(json::parse(r.str()));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptCheckpoint, std::string("bad configuration snapshot: ") + e.what());
    }
    s.generation = r.u64();

    s.population.generation = r.u64();
    s.population.target_size = r.u64();
    const std::uint64_t n_members = r.count();
    for (std::uint64_t i = 0; i < n_members; ++i) {
        Member m{get_genome(r), std::nullopt};
        const bool has = r.u8() != 0;
        const double f = r.f64();
        if (has)
            m.fitness = f;
        s.population.members.push_back(std::move(m));
    }

    const std::uint64_t n_exp = r.count();
    for (std::uint64_t i = 0; i < n_exp; ++i) {
        const GenomeId id = r.u64();
        s.experience.per_genome[id] = r.vec();
    }
    s.experience.global_best = get_reference(r);
    s.experience.current_best = get_reference(r);
    s.experience.global_worst = get_reference(r);

    const auto rng_bytes = r.raw(Rng::kStateBytes);
    s.rng = Rng::from_state(std::span<const std::uint8_t, Rng::kStateBytes>(rng_bytes.data(), Rng::kStateBytes));
    s.next_id = r.u64();
    const std::uint64_t n_log = r.count();
    for (std::uint64_t i = 0; i < n_log; ++i)
        s.log.push_back(get_report(r));

    ckpt.evaluations = r.u64();
    ckpt.cache_hits = r.u64();
    if (r.u8() != 0) {
        CacheSnapshot cache;
        cache.hits = r.u64();
        cache.misses = r.u64();
        const std::uint64_t n_entries = r.count();
        for (std::uint64_t i = 0; i < n_entries; ++i) {
            CacheKey key;
            const auto raw = r.raw(key.digest.size());
            std::copy(raw.begin(), raw.end(), key.digest.begin());
            EvaluationOutcome out;
            out.fitness = r.f64();
            const std::uint64_t n_tasks = r.count();
            for (std::uint64_t t = 0; t < n_tasks; ++t) {
                TaskPredictions tp;
                tp.task_id = r.str();
                tp.predictions = get_predictions(r);
                tp.labels = get_predictions(r);
                out.per_task.push_back(std::move(tp));
            }
            cache.entries.emplace(key, std::move(out));
        }
        ckpt.cache = std::move(cache);
    }
    if (!r.at_end())
        throw Error(ErrorCode::CorruptCheckpoint, "trailing bytes in checkpoint payload");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    const auto bytes = serialize_checkpoint(ckpt);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw Error(ErrorCode::IoError, "cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw Error(ErrorCode::IoError, "short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw Error(ErrorCode::IoError, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot read " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

// --- iteration log -------------------------------------------------------------

std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string format_log_row(const IterationReport& r)
{
    std::string row;
    row += std::to_string(r.generation) + ",";
    row += format_double(r.best_fitness) + ",";
    row += format_double(r.mean_fitness) + ",";
    row += format_double(r.topk_mean_fitness) + ",";
    row += std::to_string(r.pool_size_after_crossover) + ",";
    row += std::to_string(r.pool_size_after_mutation) + ",";
    row += std::to_string(r.evaluation_count) + ",";
    row += std::to_string(r.cache_hit_count) + ",";
    row += format_double(r.wall_clock_seconds);
    return row;
}

IterationReport parse_log_row(const std::string& row)
{
    std::vector<std::string> cells;
    std::stringstream ss(row);
    std::string cell;
    while (std::getline(ss, cell, ','))
        cells.push_back(cell);
    if (cells.size() != 9)
        throw Error(ErrorCode::IoError, "log row has " + std::to_string(cells.size()) + " fields, expected 9");
    auto num = [&](const std::string& s, auto& out) {
        const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw Error(ErrorCode::IoError, "bad log field '" + s + "'");
    };
    IterationReport r;
    num(cells[0], r.generation);
    num(cells[1], r.best_fitness);
    num(cells[2], r.mean_fitness);
    num(cells[3], r.topk_mean_fitness);
    num(cells[4], r.pool_size_after_crossover);
    num(cells[5], r.pool_size_after_mutation);
    num(cells[6], r.evaluation_count);
    num(cells[7], r.cache_hit_count);
    num(cells[8], r.wall_clock_seconds);
    return r;
}

void append_iteration_log(const IterationReport& report, std::ostream& sink)
{
    if (sink.tellp() == std::streampos(0))
        sink << kLogHeader << '\n';
    sink << format_log_row(report) << '\n';
    if (!sink)
        throw Error(ErrorCode::IoError, "cannot append to iteration log");
}

void append_iteration_log(const IterationReport& report, const std::filesystem::path& path)
{
    std::error_code ec;
    const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    if (fresh)
        out << kLogHeader << '\n';
    out << format_log_row(report) << '\n';
    if (!out)
        throw Error(ErrorCode::IoError, "cannot append to " + path.string());
}

std::vector<IterationReport> read_iteration_log(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kLogHeader)
        throw Error(ErrorCode::IoError, "missing log header in " + path.string());
    std::vector<IterationReport> out;
    while (std::getline(in, line)) {
        if (!line.empty())
            out.push_back(parse_log_row(line));
    }
    return out;
}

// --- reports -------------------------------------------------------------------

std::string report_json_text(const RunResult& run)
{
    json doc;
    doc["best_genome_id"] = run.best.id;
    doc["best_validation_fitness"] = run.best_validation_fitness;
    if (run.best_test_fitness)
        doc["best_test_fitness"] = *run.best_test_fitness;
    doc["topk_ids"] = run.topk_ids;
    doc["generations"] = run.iteration_log.size();
    if (!run.iteration_log.empty())
        doc["final_topk_mean_fitness"] = run.iteration_log.back().topk_mean_fitness;
    if (run.ensemble) {
        json ens;
        ens["member_ids"] = run.ensemble->member_ids;
        ens["ensemble_fitness"] = run.ensemble->ensemble_fitness;
        ens["member_test_fitness"] = run.ensemble->member_test_fitness;
        doc["ensemble"] = std::move(ens);
    }
    return doc.dump(2) + "\n";
}

std::string report_csv_text(const RunResult& run)
{
    auto join = [](const std::vector<GenomeId>& ids) {
        std::string s;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i)
                s += ';';
            s += std::to_string(ids[i]);
        }
        return s;
    };
    std::string out = "best_genome_id,best_validation_fitness,best_test_fitness,topk_ids,ensemble_fitness,"
                      "ensemble_member_ids\n";
    out += std::to_string(run.best.id) + ",";
    out += format_double(run.best_validation_fitness) + ",";
    out += (run.best_test_fitness ? format_double(*run.best_test_fitness) : std::string()) + ",";
    out += join(run.topk_ids) + ",";
    out += (run.ensemble ? format_double(run.ensemble->ensemble_fitness) : std::string()) + ",";
    out += (run.ensemble ? join(run.ensemble->member_ids) : std::string()) + "\n";
    return out;
}

void export_report(const RunResult& run, ReportFormat fmt, const std::filesystem::path& path)
{
    write_text_file(path, fmt == ReportFormat::Json ? report_json_text(run) : report_csv_text(run));
}

// --- run directory ---------------------------------------------------------------

std::optional<std::filesystem::path> RunDirectory::latest_checkpoint() const
{
    std::optional<std::filesystem::path> best;
    std::uint64_t best_gen = 0;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(root, ec)) {
        const std::string name = entry.path().filename().string();
        if (!name.starts_with("ckpt_") || !name.ends_with(".bin"))
            continue;
        const std::string digits = name.substr(5, name.size() - 9);
        std::uint64_t gen = 0;
        const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), gen);
        if (res.ec != std::errc() || res.ptr != digits.data() + digits.size())
            continue;
        if (!best || gen > best_gen) {
            best = entry.path();
            best_gen = gen;
        }
    }
    return best;
}

RunDirectorySink::RunDirectorySink(RunDirectory dir, bool include_cache)
    : dir_(std::move(dir)), include_cache_(include_cache)
{
    std::filesystem::create_directories(dir_.root);
}

void RunDirectorySink::on_iteration(const IterationReport& report, const Engine& engine)
{
    append_iteration_log(report, dir_.log());
    save_checkpoint(capture_checkpoint(engine.state(), engine.evaluator(), include_cache_),
                    dir_.checkpoint(report.generation));
}

void RunDirectorySink::on_abort(const EngineState& last_good, const Evaluator& evaluator)
{
    try {
        save_checkpoint(capture_checkpoint(last_good, evaluator, include_cache_), dir_.checkpoint(last_good.generation));
    } catch (const Error&) {
        // The original failure is what the caller needs to see.
    }
}

void RunDirectorySink::on_finish(const RunResult& result, const Engine&)
{
    export_report(result, ReportFormat::Json, dir_.report(ReportFormat::Json));
    export_report(result, ReportFormat::Csv, dir_.report(ReportFormat::Csv));
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::IoError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << text;
    if (!out)
        throw Error(ErrorCode::IoError, "short write to " + path.string());
}

} // namespace popevo
