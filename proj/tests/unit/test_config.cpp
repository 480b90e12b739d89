#include <gtest/gtest.h>

#include "kernelayers/config.hpp"
#include "kernelayers/error.hpp"
#include "table_rows.hpp"

using namespace kl;

namespace {

int parse_error_line(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ParseError& e) {
        return e.line();
    }
    return -1;
}

std::size_t count_kind(Network& net, const std::string& kind) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < net.size(); ++i) n += net.layer(i).kind() == kind;
    return n;
}

} // namespace

TEST(Config, DefaultsAreLinearBaseline) {
    const ExperimentConfig c = parse_config("[model]\narchitecture = model1\n");
    EXPECT_EQ(c.model.architecture, Architecture::model1);
    EXPECT_EQ(c.model.conv_placement, Placement::none);
    EXPECT_EQ(c.model.pool_placement, Placement::none);
    EXPECT_EQ(c.model.dense_kind, KernelType::linear);
    EXPECT_EQ(c.model.conv_filters, (std::vector<std::size_t>{32, 64}));
    EXPECT_EQ(c.model.dense_units, 320u);
    EXPECT_EQ(c.run.epochs, 10);
    EXPECT_EQ(c.run.patience, 2);
    EXPECT_EQ(c.run.batch_size, 64u);
    EXPECT_DOUBLE_EQ(c.run.lr, 0.001);

    Network net = build_model(c.model, 1);
    EXPECT_EQ(count_kind(net, "kervolution2d"), 2u);
    EXPECT_EQ(count_kind(net, "maxpool2d"), 2u);
    EXPECT_EQ(count_kind(net, "learnablepool2d"), 0u);
    for (std::size_t i = 0; i < net.size(); ++i)
        EXPECT_EQ(testutil::layer_signature(net.layer(i)).find("poly"), std::string::npos);
}

TEST(Config, KervolutionFirstPoly3) {
    const ExperimentConfig c =
        parse_config("[model]\narchitecture=model1\nconv=kerv-first\nkernel=poly\nn=3\n");
    Network net = build_model(c.model, 1);
    EXPECT_EQ(testutil::layer_signature(net.layer(0)), "kervolution2d[poly-3]");
    EXPECT_EQ(testutil::layer_signature(net.layer(5)), "kervolution2d[linear]");
}

TEST(Config, Model2Defaults) {
    const ExperimentConfig c = parse_config("[model]\narchitecture = model2\n[data]\ndataset = cifar10\n");
    EXPECT_EQ(c.model.input_shape, (Shape{3, 32, 32}));
    EXPECT_EQ(c.model.conv_filters.size(), 5u);
    EXPECT_EQ(c.model.dense_units, 128u);
    EXPECT_EQ(c.run.epochs, 20);
    EXPECT_EQ(c.run.patience, 5);
}

TEST(Config, ErrorsCarryLineNumbers) {
    EXPECT_EQ(parse_error_line("[model]\nn = 0\n"), 2);
    EXPECT_EQ(parse_error_line("# c\n[train]\n\nepochs = 0\n"), 4);
    EXPECT_EQ(parse_error_line("[model]\nkernal = poly\n"), 2);
    EXPECT_EQ(parse_error_line("[model]\nkernel = poly\nkernel = rbf\n"), 3);
    EXPECT_EQ(parse_error_line("[modle]\n"), 1);
    EXPECT_EQ(parse_error_line("[model]\narchitecture = model3\n"), 2);
    EXPECT_EQ(parse_error_line("[train]\nbatch_size = 1\n"), 2);
    EXPECT_EQ(parse_error_line("[train]\nlr = 1e-3x\n"), 2);
    EXPECT_EQ(parse_error_line("[model]\nsigma = -1\n"), 2);
    EXPECT_EQ(parse_error_line("architecture = model1\n"), 1);
    EXPECT_GT(parse_error_line("[model]\nconv_filters = 8,8,8\n"), -1);
}

TEST(Config, OverridesAreValidated) {
    ConfigSource src = ConfigSource::parse("[model]\nkernel = poly\n");
    src.apply_override("model.n=4");
    EXPECT_EQ(src.resolve().model.poly_order, 4);
    EXPECT_THROW(src.apply_override("model.bogus=1"), ParseError);
    EXPECT_THROW(src.apply_override("no-equals"), ParseError);
}

TEST(Config, TextRoundTrip) {
    ExperimentConfig c = parse_config(
        "[model]\narchitecture=model2\nconv=kerv-last\npool=learnable-all\nkernel=rbf\nsigma=0.35\n"
        "dense_kind=poly\nn=4\nc_init=0.1\n[train]\nseed=99\nlr=0.0003\n[data]\ndataset=fashion-mnist\n");
    const std::string text = to_text(c);
    const ExperimentConfig back = parse_config(text);
    EXPECT_EQ(to_text(back), text);
    EXPECT_EQ(back.model.sigma, 0.35);
    EXPECT_EQ(back.model.c_init, 0.1);
    EXPECT_EQ(back.run.lr, 0.0003);
    EXPECT_EQ(back.run.seed, 99u);
    EXPECT_EQ(back.model.input_shape, (Shape{1, 28, 28}));
}

TEST(Config, SchemaListsEveryKey) {
    const std::string s = schema_text();
    for (const char* key : {"architecture", "conv", "pool", "kernel", "dense_kind", "n", "sigma", "epochs",
                            "batch_size", "patience", "dataset", "root"})
        EXPECT_NE(s.find(key), std::string::npos) << key;
}

TEST(Build, LogitsShapes) {
    const ExperimentConfig m1 = parse_config("[model]\narchitecture=model1\n");
    Network a = build_model(m1.model, 1);
    EXPECT_EQ(a.output_shape({4, 1, 28, 28}), (Shape{4, 10}));

    const ExperimentConfig m2 = parse_config("[model]\narchitecture=model2\n[data]\ndataset=cifar10\n");
    Network b = build_model(m2.model, 1);
    EXPECT_EQ(b.output_shape({2, 3, 32, 32}), (Shape{2, 10}));
    Rng rng(3);
    EXPECT_EQ(b.forward(random_uniform(rng, {2, 3, 32, 32}, 0, 1), Mode::eval).shape(), (Shape{2, 10}));
}

TEST(Build, FullRbfLearnablePooling) {
    const ExperimentConfig c = parse_config(
        "[model]\narchitecture=model2\npool=learnable-all\nkernel=rbf\nsigma=0.9\n[data]\ndataset=cifar10\n");
    Network net = build_model(c.model, 1);
    EXPECT_EQ(count_kind(net, "learnablepool2d"), 5u);
    for (std::size_t i = 0; i < net.size(); ++i)
        if (net.layer(i).kind() == "learnablepool2d") EXPECT_EQ(testutil::layer_signature(net.layer(i)), "learnablepool2d[rbf]");
}

TEST(Build, SameSeedIdenticalParameters) {
    const ExperimentConfig c = parse_config("[model]\nconv=kerv-all\nkernel=poly\nn=3\npool=learnable-last\n");
    Network a = build_model(c.model, 5), b = build_model(c.model, 5), d = build_model(c.model, 6);
    const auto pa = a.parameters(), pb = b.parameters(), pd = d.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        for (std::size_t j = 0; j < pa[i]->value.size(); ++j) {
            EXPECT_EQ(pa[i]->value[j], pb[i]->value[j]);
            any_diff = any_diff || pa[i]->value[j] != pd[i]->value[j];
        }
    }
    EXPECT_TRUE(any_diff);
}

TEST(Build, IncompatibleInputShape) {
    ModelConfig m;
    m.architecture = Architecture::model2;
    m.conv_filters = {8, 8, 8, 8, 8};
    m.input_shape = {1, 16, 16};  // 16 -> 8 -> 4 -> 2 -> 1 -> cannot pool again
    EXPECT_THROW(build_model(m, 1), BuildError);
    m.input_shape = {1, 32, 32};
    EXPECT_NO_THROW(build_model(m, 1));
}

TEST(Build, EveryTableRowCompiles) {
    const auto rows = testutil::table_rows();
    EXPECT_EQ(rows.size(), 6u * 3 + 8u * 3 + 6u + 4u);
    for (const auto& row : rows)
        for (bool model2 : {false, true})
            EXPECT_EQ(testutil::check_row(row, model2), "")
                << "table " << row.table << " " << row.label << (model2 ? " model2" : " model1");
}
