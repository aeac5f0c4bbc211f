#include "mbsif/bsif.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "mbsif/errors.hpp"

namespace mbsif {

std::string to_string(PadMode mode) {
  switch (mode) {
    case PadMode::wrap:
      return "wrap";
    case PadMode::replicate:
      return "replicate";
    case PadMode::zero:
      return "zero";
    case PadMode::reflect:
      return "reflect";
  }
  return "?";
}

PadMode parse_pad_mode(const std::string& text) {
  if (text == "wrap") return PadMode::wrap;
  if (text == "replicate") return PadMode::replicate;
  if (text == "zero") return PadMode::zero;
  if (text == "reflect") return PadMode::reflect;
  throw ValidationError("unknown padding mode '" + text + "'");
}

PaddingStrategy parse_padding(const std::string& text) {
  if (text == "traditional") return PaddingStrategy::traditional();
  if (text == "modified") return PaddingStrategy::modified();
  if (text == "full-replicate") return PaddingStrategy::full_replicate();
  const auto slash = text.find('/');
  if (slash == std::string::npos) {
    throw ValidationError("unknown padding '" + text +
                          "' (expected traditional, modified, full-replicate or <radial>/<angular>)");
  }
  return {parse_pad_mode(text.substr(0, slash)), parse_pad_mode(text.substr(slash + 1))};
}

std::string to_string(const PaddingStrategy& padding) {
  if (padding == PaddingStrategy::traditional()) return "traditional";
  if (padding == PaddingStrategy::modified()) return "modified";
  if (padding == PaddingStrategy::full_replicate()) return "full-replicate";
  return to_string(padding.radial) + "/" + to_string(padding.angular);
}

int pad_source_index(int index, int extent, PadMode mode) {
  if (index >= 0 && index < extent) return index;
  switch (mode) {
    case PadMode::wrap:
      return ((index % extent) + extent) % extent;
    case PadMode::replicate:
      return index < 0 ? 0 : extent - 1;
    case PadMode::zero:
      return -1;
    case PadMode::reflect: {
      if (extent == 1) return 0;
      const int period = 2 * (extent - 1);
      const int i = ((index % period) + period) % period;
      return i < extent ? i : period - i;
    }
  }
  return -1;
}

FloatImage pad_image(const FloatImage& strip, int filter_size, const PaddingStrategy& padding) {
  if (filter_size < 1 || filter_size % 2 == 0) {
    throw ValidationError("filter size must be a positive odd number, got " + std::to_string(filter_size));
  }
  const int k = (filter_size - 1) / 2;
  const int width = strip.width();
  const int height = strip.height();
  FloatImage out(width + 2 * k, height + 2 * k);
  // Separable index maps: the angular rule picks the column, the radial rule the row.
  std::vector<int> columns(static_cast<std::size_t>(width + 2 * k));
  for (int x = 0; x < width + 2 * k; ++x) columns[x] = pad_source_index(x - k, width, padding.angular);
  for (int y = 0; y < height + 2 * k; ++y) {
    const int sy = pad_source_index(y - k, height, padding.radial);
    for (int x = 0; x < width + 2 * k; ++x) {
      const int sx = columns[x];
      out.at(x, y) = (sx < 0 || sy < 0) ? 0.0 : strip.at(sx, sy);
    }
  }
  return out;
}

ResponseStack filter_responses(const FloatImage& strip, const FilterBank& bank, const PaddingStrategy& padding) {
  const int l = bank.size();
  const FloatImage padded = pad_image(strip, l, padding);
  const int width = strip.width();
  const int height = strip.height();
  const int padded_width = padded.width();
  const double* source = padded.data().data();

  ResponseStack stack;
  stack.responses.reserve(static_cast<std::size_t>(bank.bits()));
  for (int i = 0; i < bank.bits(); ++i) {
    std::vector<double> taps(static_cast<std::size_t>(l) * l);
    for (int j = 0; j < l * l; ++j) taps[j] = bank.weights()(i, j);
    std::vector<double> response(static_cast<std::size_t>(width) * height);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (int v = 0; v < l; ++v) {
          const double* row = source + static_cast<std::size_t>(y + v) * padded_width + x;
          const double* w = taps.data() + static_cast<std::size_t>(v) * l;
          for (int u = 0; u < l; ++u) acc += w[u] * row[u];
        }
        response[static_cast<std::size_t>(y) * width + x] = acc;
      }
    }
    stack.responses.emplace_back(width, height, std::move(response));
  }
  return stack;
}

CodeImage encode(const FloatImage& strip, const BitMask& mask, const FilterBank& bank,
                 const PaddingStrategy& padding) {
  if (!mask.matches(strip.width(), strip.height())) throw ValidationError("mask dimensions do not match the strip");
  const ResponseStack stack = filter_responses(strip, bank, padding);
  CodeImage code{bank.bits(), strip.width(), strip.height(),
                 std::vector<std::uint32_t>(static_cast<std::size_t>(strip.width()) * strip.height(), 0u), mask};
  for (int i = 0; i < stack.bits(); ++i) {
    const auto& response = stack.responses[static_cast<std::size_t>(i)].data();
    for (std::size_t p = 0; p < code.codes.size(); ++p) {
      if (response[p] > 0.0) code.codes[p] |= 1u << i;
    }
  }
  return code;
}

std::string to_string(FeatureKind kind) { return kind == FeatureKind::histogram ? "histogram" : "full_image"; }

FeatureKind parse_feature_kind(const std::string& text) {
  if (text == "histogram") return FeatureKind::histogram;
  if (text == "full_image" || text == "full" || text == "full-image") return FeatureKind::full_image;
  throw ValidationError("unknown feature kind '" + text + "' (expected histogram or full_image)");
}

std::string to_string(HistogramMode mode) {
  return mode == HistogramMode::mask_zeroed ? "mask_zeroed" : "mask_excluded";
}

HistogramMode parse_histogram_mode(const std::string& text) {
  if (text == "mask_zeroed" || text == "zeroed") return HistogramMode::mask_zeroed;
  if (text == "mask_excluded" || text == "excluded") return HistogramMode::mask_excluded;
  throw ValidationError("unknown histogram mode '" + text + "' (expected zeroed or excluded)");
}

FeatureVector histogram_feature(const CodeImage& code, HistogramMode mode) {
  if (code.bits < 1 || code.bits > kMaxBits) throw ValidationError("code image has an invalid bit count");
  std::vector<double> counts(std::size_t{1} << code.bits, 0.0);
  std::size_t total = 0;
  for (int y = 0; y < code.height; ++y) {
    for (int x = 0; x < code.width; ++x) {
      if (mode == HistogramMode::mask_excluded && code.mask.at(x, y)) continue;
      counts[code.at(x, y)] += 1.0;
      ++total;
    }
  }
  if (total == 0) throw ValidationError("histogram has empty support: every pixel is masked");
  for (double& c : counts) c /= static_cast<double>(total);
  return FeatureVector{FeatureKind::histogram, std::move(counts), Gender::unknown, {}, Eye::left};
}

FeatureVector full_image_feature(const CodeImage& code) {
  std::vector<double> values(code.codes.begin(), code.codes.end());
  return FeatureVector{FeatureKind::full_image, std::move(values), Gender::unknown, {}, Eye::left};
}

void save_code_image(const CodeImage& code, const std::filesystem::path& path,
                     const std::vector<std::string>& comments) {
  if (code.bits <= 8) {
    std::vector<std::uint8_t> bytes(code.codes.begin(), code.codes.end());
    save_gray(GrayImage(code.width, code.height, std::move(bytes)), path, comments);
  } else {
    std::vector<std::uint16_t> words(code.codes.begin(), code.codes.end());
    save_gray16(code.width, code.height, words, path, comments);
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

void append_double(std::string& out, double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  out.append(buffer, result.ptr);
}

}  // namespace

void write_feature_csv(std::ostream& out, const std::vector<FeatureVector>& features,
                       const std::vector<std::string>& provenance) {
  for (const auto& line : provenance) out << "# " << line << "\n";
  const std::size_t length = features.empty() ? 0 : features.front().values.size();
  out << "sample_id,eye,gender,kind";
  for (std::size_t i = 0; i < length; ++i) out << ",v" << i;
  out << "\n";
  std::string row;
  for (const auto& f : features) {
    if (f.values.size() != length) throw ValidationError("feature vectors in one CSV must share a length");
    row = f.source_id + "," + to_string(f.eye) + "," + to_string(f.label) + "," + to_string(f.kind);
    for (double v : f.values) {
      row += ',';
      append_double(row, v);
    }
    out << row << "\n";
  }
}

std::vector<FeatureVector> read_feature_csv(std::istream& in, const std::string& context) {
  std::vector<FeatureVector> out;
  std::string line;
  bool header_seen = false;
  std::size_t columns = 0;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_csv_line(line);
    const std::string where = context + ":" + std::to_string(line_number);
    if (!header_seen) {
      if (fields.size() < 4 || fields[0] != "sample_id") throw FormatError(where + ": missing feature CSV header");
      columns = fields.size();
      header_seen = true;
      continue;
    }
    if (fields.size() != columns) throw FormatError(where + ": expected " + std::to_string(columns) + " fields");
    FeatureVector f;
    f.source_id = fields[0];
    f.eye = parse_eye(fields[1]);
    f.label = parse_gender(fields[2]);
    f.kind = parse_feature_kind(fields[3]);
    f.values.reserve(columns - 4);
    for (std::size_t i = 4; i < columns; ++i) {
      double v = 0.0;
      const auto& s = fields[i];
      const auto result = std::from_chars(s.data(), s.data() + s.size(), v);
      if (result.ec != std::errc{} || result.ptr != s.data() + s.size()) {
        throw FormatError(where + ": bad numeric value '" + s + "'");
      }
      f.values.push_back(v);
    }
    out.push_back(std::move(f));
  }
  if (!header_seen) throw FormatError(context + ": empty feature CSV");
  return out;
}

}  // namespace mbsif
