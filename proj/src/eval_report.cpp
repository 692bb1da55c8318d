#include "crossrf/eval_report.hpp"

#include "crossrf/signal_data.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace crossrf {

namespace {

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

// Value as it appears after formatting, so JSON and CSV agree.
double rounded(double v, int decimals) { return std::stod(fixed(v, decimals)); }

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

// One CSV record starting at `pos`; advances past the line terminator.
std::vector<std::string> read_record(const std::string& text, std::size_t& pos) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    while (pos < text.size()) {
        const char c = text[pos++];
        if (quoted) {
            if (c == '"') {
                if (pos < text.size() && text[pos] == '"') {
                    fields.back() += '"';
                    ++pos;
                } else {
                    quoted = false;
                }
            } else {
                fields.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else if (c == '\n') {
            return fields;
        } else {
            fields.back() += c;
        }
    }
    if (quoted) throw std::invalid_argument("csv: unterminated quote");
    return fields;
}

double parse_double(const std::string& s, const char* what) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw std::invalid_argument(std::string("csv: bad number for ") + what + ": '" + s + "'");
    return v;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IOError("write failed for '" + path.string() + "'");
}

const char* kReportHeader = "scenario,source_only,target_before,target_after,macro_precision,macro_recall,macro_f1";

}  // namespace

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels, int num_classes) {
    if (num_classes < 1) throw std::invalid_argument("confusion: num_classes must be >= 1");
    if (predictions.size() != labels.size())
        throw std::invalid_argument("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                                    std::to_string(labels.size()) + " labels");
    ConfusionMatrix m;
    m.counts.setZero(num_classes, num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int t = labels[i], p = predictions[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
            throw std::invalid_argument("confusion: class out of range at index " + std::to_string(i));
        ++m.counts(t, p);
    }
    return m;
}

Metrics metrics(const ConfusionMatrix& m) {
    const auto total = m.total();
    if (total <= 0) throw std::domain_error("metrics: empty confusion matrix");
    const int k = m.num_classes();
    Metrics out;
    out.accuracy = static_cast<double>(m.trace()) / static_cast<double>(total);
    for (int c = 0; c < k; ++c) {
        const auto tp = static_cast<double>(m.counts(c, c));
        const auto predicted = static_cast<double>(m.counts.col(c).sum());
        const auto actual = static_cast<double>(m.counts.row(c).sum());
        const double p = predicted > 0 ? tp / predicted : 0.0;
        const double r = actual > 0 ? tp / actual : 0.0;
        out.macro_precision += p;
        out.macro_recall += r;
        out.macro_f1 += (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    out.macro_precision /= k;
    out.macro_recall /= k;
    out.macro_f1 /= k;
    return out;
}

const char* to_string(Stage s) {
    switch (s) {
        case Stage::SourceOnly: return "source_only";
        case Stage::TargetBefore: return "target_before";
        case Stage::TargetAfter: return "target_after";
    }
    return "?";
}

ComparisonReport comparison_report(const std::string& scenario, const StageEval& source_only,
                                   const StageEval& target_before, const StageEval& target_after, int num_classes) {
    ComparisonReport r;
    r.scenario = scenario;
    const std::array<const StageEval*, 3> evals{&source_only, &target_before, &target_after};
    for (std::size_t i = 0; i < 3; ++i) {
        r.confusion[i] = confusion(evals[i]->predictions, evals[i]->labels, num_classes);
        r.accuracy[i] = r.confusion[i].total() > 0 ? 100.0 * metrics(r.confusion[i]).accuracy : 0.0;
    }
    if (r.confusion[2].total() > 0) r.after = metrics(r.confusion[2]);
    return r;
}

ReportRow to_row(const ComparisonReport& r) {
    return {r.scenario,
            rounded(r.accuracy[0], 2),
            rounded(r.accuracy[1], 2),
            rounded(r.accuracy[2], 2),
            rounded(r.after.macro_precision, 4),
            rounded(r.after.macro_recall, 4),
            rounded(r.after.macro_f1, 4)};
}

std::string report_csv(std::span<const ReportRow> rows) {
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& r : rows) {
        out += quote_if_needed(r.scenario) + ',' + fixed(r.source_only, 2) + ',' + fixed(r.target_before, 2) + ',' +
               fixed(r.target_after, 2) + ',' + fixed(r.macro_precision, 4) + ',' + fixed(r.macro_recall, 4) + ',' +
               fixed(r.macro_f1, 4) + '\n';
    }
    return out;
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
    std::size_t pos = 0;
    const auto header = read_record(text, pos);
    std::string joined;
    for (std::size_t i = 0; i < header.size(); ++i) joined += (i ? "," : "") + header[i];
    if (joined != kReportHeader) throw std::invalid_argument("report csv: unexpected header '" + joined + "'");
    std::vector<ReportRow> rows;
    while (pos < text.size()) {
        const auto f = read_record(text, pos);
        if (f.size() != 7) throw std::invalid_argument("report csv: expected 7 fields, got " + std::to_string(f.size()));
        rows.push_back({f[0], parse_double(f[1], "source_only"), parse_double(f[2], "target_before"),
                        parse_double(f[3], "target_after"), parse_double(f[4], "macro_precision"),
                        parse_double(f[5], "macro_recall"), parse_double(f[6], "macro_f1")});
    }
    return rows;
}

std::string confusion_csv(const ConfusionMatrix& m) {
    std::ostringstream out;
    out << "true\\predicted";
    for (int c = 0; c < m.num_classes(); ++c) out << ',' << c;
    out << '\n';
    for (int t = 0; t < m.num_classes(); ++t) {
        out << t;
        for (int p = 0; p < m.num_classes(); ++p) out << ',' << m.counts(t, p);
        out << '\n';
    }
    return out.str();
}

ConfusionMatrix parse_confusion_csv(const std::string& text) {
    std::size_t pos = 0;
    const auto header = read_record(text, pos);
    if (header.empty() || header[0] != "true\\predicted") throw std::invalid_argument("confusion csv: bad header");
    const int k = static_cast<int>(header.size()) - 1;
    if (k < 1) throw std::invalid_argument("confusion csv: no classes");
    ConfusionMatrix m;
    m.counts.setZero(k, k);
    for (int t = 0; t < k; ++t) {
        if (pos >= text.size()) throw std::invalid_argument("confusion csv: missing rows");
        const auto f = read_record(text, pos);
        if (static_cast<int>(f.size()) != k + 1 || f[0] != std::to_string(t))
            throw std::invalid_argument("confusion csv: malformed row " + std::to_string(t));
        for (int p = 0; p < k; ++p) {
            std::int64_t v = 0;
            const auto& s = f[static_cast<std::size_t>(p) + 1];
            const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || ptr != s.data() + s.size() || v < 0)
                throw std::invalid_argument("confusion csv: bad count '" + s + "'");
            m.counts(t, p) = v;
        }
    }
    if (pos < text.size()) throw std::invalid_argument("confusion csv: trailing rows");
    return m;
}

nlohmann::json to_json(const ComparisonReport& r) {
    const auto row = to_row(r);
    nlohmann::json conf = nlohmann::json::object();
    for (auto s : kStages) {
        const auto& m = r.confusion[static_cast<std::size_t>(s)];
        nlohmann::json rows = nlohmann::json::array();
        for (int t = 0; t < m.num_classes(); ++t) {
            std::vector<std::int64_t> cells(m.counts.row(t).begin(), m.counts.row(t).end());
            rows.push_back(cells);
        }
        conf[to_string(s)] = rows;
    }
    return {{"scenario", row.scenario},
            {"source_only", row.source_only},
            {"target_before", row.target_before},
            {"target_after", row.target_after},
            {"macro_precision", row.macro_precision},
            {"macro_recall", row.macro_recall},
            {"macro_f1", row.macro_f1},
            {"confusion", conf}};
}

void write_report(const ComparisonReport& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IOError("cannot create '" + dir.string() + "': " + ec.message());
    const std::array<ReportRow, 1> rows{to_row(r)};
    write_text(dir / "report.csv", report_csv(rows));
    write_text(dir / "report.json", to_json(r).dump(2) + "\n");
    for (auto s : kStages) {
        write_text(dir / (std::string("confusion_") + to_string(s) + ".csv"),
                   confusion_csv(r.confusion[static_cast<std::size_t>(s)]));
    }
}

}  // namespace crossrf
