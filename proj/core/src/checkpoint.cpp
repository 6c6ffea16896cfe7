#include "apgl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "apgl/error.hpp"

namespace apgl::ad {

namespace {

constexpr char kMagic[8] = {'A', 'P', 'G', 'L', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw DataError("cannot open checkpoint for writing: " +
                               path.string());
  }
  template <typename U>
  void uint(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.put(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw DataError("failed writing checkpoint " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path)
      : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw DataError("cannot open checkpoint: " + path.string());
  }
  template <typename U>
  U uint() {
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      const int c = in_.get();
      if (c == EOF) truncated();
      value |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return value;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) truncated();
    return s;
  }
  [[noreturn]] void truncated() {
    throw DataError("truncated checkpoint: " + path_.string());
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

struct Record {
  Shape shape;
  std::vector<double> values;
  std::vector<double> m;
  std::vector<double> v;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const ParameterSet& params, const Adam* optimizer) {
  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.uint<std::uint8_t>(kCheckpointVersion);
  w.uint<std::uint64_t>(
      static_cast<std::uint64_t>(optimizer ? optimizer->steps() : 0));
  w.uint<std::uint8_t>(optimizer ? 1 : 0);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  std::size_t idx = 0;
  for (const auto& p : params) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) w.uint<std::uint64_t>(d);
    for (double x : p.tensor.values()) w.f64(x);
    if (optimizer) {
      for (double x : optimizer->first_moments()[idx]) w.f64(x);
      for (double x : optimizer->second_moments()[idx]) w.f64(x);
    }
    ++idx;
  }
  w.finish(path);
}

void load_checkpoint(const std::filesystem::path& path, ParameterSet& params,
                     Adam* optimizer) {
  Reader r(path);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  const auto version = r.uint<std::uint8_t>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));
  }
  const auto steps = static_cast<std::int64_t>(r.uint<std::uint64_t>());
  const bool has_moments = r.uint<std::uint8_t>() != 0;
  const auto count = r.uint<std::uint32_t>();

  std::map<std::string, Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.uint<std::uint32_t>();
    std::string name = r.str(name_len);
    Record rec;
    const auto rank = r.uint<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k)
      rec.shape.push_back(static_cast<std::size_t>(r.uint<std::uint64_t>()));
    const std::size_t n = shape_numel(rec.shape);
    rec.values.resize(n);
    for (auto& x : rec.values) x = r.f64();
    if (has_moments) {
      rec.m.resize(n);
      rec.v.resize(n);
      for (auto& x : rec.m) x = r.f64();
      for (auto& x : rec.v) x = r.f64();
    }
    records.emplace(std::move(name), std::move(rec));
  }

  // Validate everything before touching any parameter.
  for (const auto& p : params) {
    auto it = records.find(p.name);
    if (it == records.end()) {
      throw DataError("checkpoint lacks parameter " + p.name);
    }
    if (it->second.shape != p.tensor.shape()) {
      throw ShapeError("parameter " + p.name + ": checkpoint shape " +
                       shape_string(it->second.shape) + " vs model shape " +
                       shape_string(p.tensor.shape()));
    }
  }
  if (optimizer && !has_moments) {
    throw DataError("checkpoint has no optimizer state: " + path.string());
  }

  std::size_t idx = 0;
  for (auto& p : params) {
    const auto& rec = records.at(p.name);
    auto dst = p.tensor.mutable_values();
    std::copy(rec.values.begin(), rec.values.end(), dst.begin());
    if (optimizer) {
      optimizer->first_moments()[idx] = rec.m;
      optimizer->second_moments()[idx] = rec.v;
    }
    ++idx;
  }
  if (optimizer) optimizer->set_steps(steps);
}

}  // namespace apgl::ad
