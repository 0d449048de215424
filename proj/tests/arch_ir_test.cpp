#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "flnas/arch_ir.hpp"
#include "oracles.hpp"

namespace flnas {
namespace {

using testing::kMinimalArchJson;
using testing::minimal_arch;

TEST(ParseArchitecture, MinimalDocument) {
  const auto arch = parse_architecture(kMinimalArchJson);
  EXPECT_EQ(arch.layers.size(), 4u);
  EXPECT_EQ(arch, minimal_arch());
}

TEST(ParseArchitecture, CanonicalRoundTripIsByteIdentical) {
  const auto arch = parse_architecture(kMinimalArchJson);
  const auto text = serialize_architecture(arch);
  EXPECT_EQ(text, kMinimalArchJson);
  EXPECT_EQ(serialize_architecture(parse_architecture(text)), text);
}

TEST(ParseArchitecture, KeyOrderDoesNotAffectCanonicalForm) {
  const char* permuted =
      R"({"layers":[{"bias":true,"padding":1,"stride":1,"kernel":3,"out_channels":16,"op":"conv2d"},)"
      R"({"kind":"avg","op":"global_pool"},{"op":"flatten"},{"bias":true,"out_features":8,"op":"dense"}],)"
      R"("num_classes":8,"input":{"width":32,"height":32,"channels":3},"name":"minimal"})";
  EXPECT_EQ(serialize_architecture(parse_architecture(permuted)), serialize_architecture(minimal_arch()));
}

TEST(ParseArchitecture, RejectsEveryOpOutsideTheSchema) {
  for (const char* op : {"conv3d", "conv1d", "lstm", "attention", "residual", "Conv2d", ""}) {
    const std::string doc = std::string(R"({"name":"x","input":{"channels":1,"height":4,"width":4},"num_classes":2,)") +
                            R"("layers":[{"op":")" + op + R"("}]})";
    try {
      parse_architecture(doc);
      FAIL() << "accepted op " << op;
    } catch (const SchemaError& e) {
      EXPECT_NE(std::string(e.what()).find(std::string("'") + op + "'"), std::string::npos) << e.what();
    }
  }
  for (auto op : kLayerOps) EXPECT_FALSE(op.empty());
}

TEST(ParseArchitecture, MalformedJsonReportsLine) {
  const char* doc = "{\n  \"name\": \"x\",\n  \"input\": {\n   oops\n}";
  try {
    parse_architecture(doc);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(ParseArchitecture, SchemaViolations) {
  auto with_layer = [](const std::string& layer) {
    return std::string(R"({"name":"x","input":{"channels":1,"height":4,"width":4},"num_classes":2,"layers":[)") +
           layer + "]}";
  };
  EXPECT_THROW(parse_architecture(with_layer(R"({"op":"conv2d","out_channels":4,"kernel":3,"stride":1,"bias":true})")),
               SchemaError);  // missing padding
  EXPECT_THROW(parse_architecture(with_layer(R"({"op":"conv2d","out_channels":4,"kernel":0,"stride":1,"padding":0,"bias":true})")),
               SchemaError);
  EXPECT_THROW(parse_architecture(with_layer(R"({"op":"conv2d","out_channels":4,"kernel":3,"stride":1,"padding":-1,"bias":true})")),
               SchemaError);
  EXPECT_THROW(parse_architecture(with_layer(R"({"op":"conv2d","out_channels":4,"kernel":3.0,"stride":1,"padding":0,"bias":true})")),
               SchemaError);
  EXPECT_THROW(parse_architecture(with_layer(R"({"op":"conv2d","out_channels":4,"kernel":3,"stride":1,"padding":"same","bias":true})")),
               SchemaError);
  EXPECT_THROW(parse_architecture(with_layer(R"({"op":"dropout","p":1.0})")), SchemaError);
  EXPECT_THROW(parse_architecture(with_layer(R"({"op":"norm","kind":"group"})")), SchemaError);
  EXPECT_THROW(parse_architecture(with_layer(R"({"op":"norm","kind":"instance"})")), SchemaError);
  EXPECT_THROW(parse_architecture(with_layer(R"({"op":"flatten","extra":1})")), SchemaError);
  EXPECT_THROW(parse_architecture(R"({"name":"x","input":{"channels":1,"height":4,"width":4},"num_classes":2,"layers":[]})"),
               SchemaError);
  EXPECT_THROW(parse_architecture(R"({"name":"has space","input":{"channels":1,"height":4,"width":4},"num_classes":2,"layers":[{"op":"flatten"}]})"),
               SchemaError);
  EXPECT_THROW(parse_architecture(R"([1,2,3])"), SchemaError);
}

TEST(ParseArchitecture, MissingNameIsLeftEmptyAndSerializerRefuses) {
  auto arch = parse_architecture(
      R"({"input":{"channels":1,"height":4,"width":4},"num_classes":2,"layers":[{"op":"flatten"}]})");
  EXPECT_TRUE(arch.name.empty());
  EXPECT_THROW(serialize_architecture(arch), SchemaError);
  arch.name = "named";
  EXPECT_NO_THROW(serialize_architecture(arch));
}

TEST(SerializeArchitecture, RandomRoundTrip) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    auto arch = testing::random_stack(rng);
    arch.layers.push_back(Dropout{0.3});
    arch.layers.push_back(Norm{NormKind::layer, std::int64_t{3}});
    EXPECT_EQ(parse_architecture(serialize_architecture(arch)), arch);
  }
}

TEST(InferShapes, SamePaddingConvPreservesSpatialDims) {
  auto arch = minimal_arch();
  const auto shapes = infer_shapes(arch);
  EXPECT_EQ(shapes[0], (TensorShape{16, 32, 32}));
  EXPECT_EQ(shapes[1], (TensorShape{16, 1, 1}));
  EXPECT_EQ(shapes[2], (TensorShape{16, 1, 1}));
  EXPECT_EQ(shapes[3], (TensorShape{8, 1, 1}));
}

TEST(InferShapes, MaxPoolHalvesSpatialDims) {
  Architecture a{"p", {16, 32, 32}, 2, {Pool{PoolKind::max, 2, 2}, Flatten{}, Dense{2, true}}};
  // floor((32 - 2) / 2) + 1 = 16
  EXPECT_EQ(infer_shapes(a)[0], (TensorShape{16, 16, 16}));
}

TEST(InferShapes, ShrinkingConvStackFailsWhereSpatialReachesZero) {
  // 8 -> 6 -> 4 -> 2 -> floor((2 - 3) / 1) + 1 = 0 at the fourth conv (index 3).
  Architecture a{"shrink", {3, 8, 8}, 2, {}};
  for (int i = 0; i < 5; ++i) a.layers.push_back(Conv2d{8, 3, 1, 0, true});
  a.layers.push_back(GlobalPool{});
  a.layers.push_back(Flatten{});
  a.layers.push_back(Dense{2, true});
  try {
    infer_shapes(a);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.layer_index(), 3u);
  }
  EXPECT_EQ(oracle::simulate(a).failed_at, std::optional<std::size_t>(3));
}

TEST(InferShapes, ShapeRuleViolations) {
  auto fails_at = [](const Architecture& a) -> std::size_t {
    try {
      infer_shapes(a);
    } catch (const ShapeError& e) {
      return e.layer_index();
    }
    return 999;
  };
  EXPECT_EQ(fails_at({"a", {4, 4, 4}, 2, {Dense{2, true}}}), 0u);  // dense before flatten
  EXPECT_EQ(fails_at({"a", {4, 4, 4}, 2, {Flatten{}, Conv2d{4, 1, 1, 0, true}, Dense{2, true}}}), 1u);
  EXPECT_EQ(fails_at({"a", {4, 4, 4}, 2, {Flatten{}, Pool{PoolKind::max, 1, 1}, Dense{2, true}}}), 1u);
  EXPECT_EQ(fails_at({"a", {6, 4, 4}, 2, {Norm{NormKind::group, 4}, Flatten{}, Dense{2, true}}}), 0u);
  EXPECT_EQ(fails_at({"a", {4, 4, 4}, 3, {Flatten{}, Dense{2, true}}}), 1u);    // wrong class count
  EXPECT_EQ(fails_at({"a", {4, 4, 4}, 4, {Activation{ActKind::relu}}}), 0u);    // never flattened
  EXPECT_EQ(fails_at({"a", {6, 4, 4}, 2, {Norm{NormKind::group, 3}, Flatten{}, Dense{2, true}}}), 999u);
}

TEST(InferShapes, WindowFormulaMatchesIndexSimulation) {
  for (std::int64_t in = 1; in <= 12; ++in)
    for (std::int64_t k = 1; k <= 6; ++k)
      for (std::int64_t s = 1; s <= 4; ++s)
        for (std::int64_t p = 0; p <= 3; ++p) {
          Architecture a{"w", {1, in, 1}, 1, {Conv2d{1, k, s, p, false}, Flatten{}, Dense{1, false}}};
          // width 1 would fail when k > 1 + 2p; use square input instead
          a.input.width = in;
          const auto expected = oracle::slide_count(in, k, s, p);
          if (expected < 1) {
            EXPECT_THROW(infer_shapes(a), ShapeError);
          } else {
            EXPECT_EQ(infer_shapes(a)[0].height, expected) << in << " " << k << " " << s << " " << p;
          }
        }
}

TEST(InferShapes, RandomStacksAgreeWithSimulation) {
  std::mt19937_64 rng(11);
  int accepted = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto arch = testing::random_stack(rng);
    const auto sim = oracle::simulate(arch);
    try {
      const auto shapes = infer_shapes(arch);
      ASSERT_FALSE(sim.failed_at.has_value());
      for (std::size_t j = 0; j < shapes.size(); ++j) {
        EXPECT_EQ(shapes[j].channels, sim.outputs[j].c);
        EXPECT_EQ(shapes[j].height, sim.outputs[j].h);
        EXPECT_EQ(shapes[j].width, sim.outputs[j].w);
      }
      ++accepted;
    } catch (const ShapeError& e) {
      ASSERT_TRUE(sim.failed_at.has_value());
      EXPECT_EQ(e.layer_index(), *sim.failed_at);
    }
  }
  EXPECT_GT(accepted, 100);
}

Choices standard_choices() {
  Choices c;
  c.kernel_sizes = {1, 3, 5, 7};
  c.channel_range = {8, 64};
  c.depth_range = {1, 4};
  c.dense_width_range = {16, 256};
  return c;
}

TEST(Validate, ValidArchitecture) {
  const auto r = validate(minimal_arch(), standard_choices());
  EXPECT_TRUE(r.valid);
  EXPECT_TRUE(r.violations.empty());
  EXPECT_EQ(r.per_layer_shapes.size(), 4u);
}

TEST(Validate, KernelNotAllowed) {
  auto a = minimal_arch();
  a.layers[0] = Conv2d{16, 4, 1, 1, true};
  const auto r = validate(a, standard_choices());
  EXPECT_FALSE(r.valid);
  ASSERT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].code, "KERNEL_NOT_ALLOWED");
  EXPECT_EQ(r.violations[0].layer_index, std::optional<std::size_t>(0));
}

TEST(Validate, ReportsAllViolations) {
  auto a = minimal_arch();
  a.layers[0] = Conv2d{512, 3, 1, 1, true};  // channels out of range
  a.layers.insert(a.layers.begin() + 2, Dense{32, true});  // dense before flatten: shape error
  const auto r = validate(a, standard_choices());
  EXPECT_FALSE(r.valid);
  EXPECT_GE(r.violations.size(), 2u);
  std::set<std::string> codes;
  for (const auto& v : r.violations) codes.insert(v.code);
  EXPECT_TRUE(codes.count("SHAPE_ERROR"));
  EXPECT_TRUE(codes.count("CHANNELS_OUT_OF_RANGE"));
}

TEST(Validate, ChoiceGates) {
  auto c = standard_choices();
  c.allowed_norms = {NormKind::batch};
  c.allowed_activations = {ActKind::relu};
  c.allow_dropout = false;
  c.depth_range = {2, 4};
  Architecture a{"g", {3, 8, 8}, 2,
                 {Conv2d{8, 3, 1, 1, true}, Norm{NormKind::layer, std::nullopt}, Activation{ActKind::gelu},
                  Dropout{0.5}, Flatten{}, Dense{4, true}, Dense{2, true}}};
  const auto r = validate(a, c);
  std::vector<std::string> codes;
  for (const auto& v : r.violations) codes.push_back(v.code);
  EXPECT_EQ(codes, (std::vector<std::string>{"NORM_NOT_ALLOWED", "ACTIVATION_NOT_ALLOWED", "DROPOUT_NOT_ALLOWED",
                                             "DENSE_WIDTH_OUT_OF_RANGE", "DEPTH_OUT_OF_RANGE"}));
  EXPECT_FALSE(r.violations.back().layer_index.has_value());
}

TEST(Validate, ValidImpliesShapeInferenceSucceeds) {
  std::mt19937_64 rng(3);
  Choices loose;
  loose.kernel_sizes = {1, 3, 5};
  loose.channel_range = {1, 8};
  loose.depth_range = {0, 10};
  loose.dense_width_range = {1, 8};
  for (int i = 0; i < 500; ++i) {
    const auto arch = testing::random_stack(rng);
    if (validate(arch, loose).valid) EXPECT_NO_THROW(infer_shapes(arch));
  }
}

TEST(Choices, ParseAndRender) {
  const auto c = parse_choices(testing::read_file(testing::data_dir() / "choices.json"));
  EXPECT_EQ(parse_choices(serialize_choices(c)), c);
  EXPECT_THROW(parse_choices(R"({"kernel_sizes":[2],"channel_range":[1,2],"depth_range":[1,2],"allowed_norms":[],"allowed_activations":[],"allow_dropout":true,"dense_width_range":[1,2]})"),
               SchemaError);
  EXPECT_THROW(parse_choices(R"({"kernel_sizes":[3],"channel_range":[5,2],"depth_range":[1,2],"allowed_norms":[],"allowed_activations":[],"allow_dropout":true,"dense_width_range":[1,2]})"),
               SchemaError);
}

}  // namespace
}  // namespace flnas
