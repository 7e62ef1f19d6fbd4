#include <stdio.h>

#include "msabn.h"

int main(void) {
    const char *cfg = "{\"backbone\":\"resnet8\",\"num_classes\":3,\"input_size\":16,\"width\":4}";
    MsabnModel *model = NULL;
    if (msabn_model_new(cfg, 1, &model) != MSABN_STATUS_OK) {
        fprintf(stderr, "new: %s\n", msabn_last_error());
        return 1;
    }
    unsigned char pixels[16 * 16 * 3];
    for (size_t i = 0; i < sizeof pixels; i++) {
        pixels[i] = (unsigned char)(i * 7);
    }
    float logits[3];
    float attention[16 * 16];
    MsabnStatus s = msabn_model_predict(model, pixels, 16, 16, 3, logits, 3, attention, 16 * 16);
    if (s != MSABN_STATUS_OK) {
        fprintf(stderr, "predict: %s\n", msabn_last_error());
        msabn_model_free(model);
        return 1;
    }
    MsabnBox box = {0, 0, 8, 8};
    double frac = -1.0;
    msabn_frac_attention_outside(attention, 16, 16, box, 0.2f, &frac);
    printf("logits %.4f %.4f %.4f frac_out %.4f\n", logits[0], logits[1], logits[2], frac);
    msabn_model_free(model);
    return 0;
}
