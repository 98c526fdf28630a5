#include <setjmp.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include <jpeglib.h>

struct shim_err {
    struct jpeg_error_mgr pub;
    jmp_buf jump;
    char msg[JMSG_LENGTH_MAX];
};

static void shim_error_exit(j_common_ptr cinfo) {
    struct shim_err *err = (struct shim_err *)cinfo->err;
    (*cinfo->err->format_message)(cinfo, err->msg);
    longjmp(err->jump, 1);
}

static void shim_silent(j_common_ptr cinfo, int level) {
    (void)cinfo;
    (void)level;
}

/* Coefficient dump: out_coefs receives comps * hb * wb * 64 shorts in
 * natural order, out_quant receives comps * 64 quant steps in natural order.
 * Returns 0 on success, -1 on libjpeg error (message copied to errbuf). */
int refjpeg_read_coefficients(const unsigned char *data, unsigned long len, int *out_w,
                              int *out_h, int *out_comps, int *out_wb, int *out_hb,
                              short **out_coefs, unsigned short *out_quant, char *errbuf,
                              int errlen) {
    struct jpeg_decompress_struct cinfo;
    struct shim_err jerr;
    short *coefs = NULL;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = shim_error_exit;
    jerr.pub.emit_message = shim_silent;
    if (setjmp(jerr.jump)) {
        snprintf(errbuf, errlen, "%s", jerr.msg);
        jpeg_destroy_decompress(&cinfo);
        free(coefs);
        return -1;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, data, len);
    jpeg_read_header(&cinfo, TRUE);
    jvirt_barray_ptr *arrays = jpeg_read_coefficients(&cinfo);
    int comps = cinfo.num_components;
    if (comps > 4) comps = 4;
    int wb = cinfo.comp_info[0].width_in_blocks;
    int hb = cinfo.comp_info[0].height_in_blocks;
    for (int c = 0; c < comps; c++) {
        if (cinfo.comp_info[c].width_in_blocks != (JDIMENSION)wb ||
            cinfo.comp_info[c].height_in_blocks != (JDIMENSION)hb) {
            snprintf(errbuf, errlen, "component sizes differ");
            jpeg_destroy_decompress(&cinfo);
            return -1;
        }
    }
    coefs = (short *)malloc(sizeof(short) * 64 * (size_t)wb * hb * comps);
    for (int c = 0; c < comps; c++) {
        jpeg_component_info *ci = &cinfo.comp_info[c];
        JQUANT_TBL *q = ci->quant_table;
        for (int k = 0; k < 64; k++) out_quant[c * 64 + k] = q ? q->quantval[k] : 0;
        for (int by = 0; by < hb; by++) {
            JBLOCKARRAY rows =
                (*cinfo.mem->access_virt_barray)((j_common_ptr)&cinfo, arrays[c], by, 1, FALSE);
            for (int bx = 0; bx < wb; bx++) {
                short *dst = coefs + (((size_t)c * hb + by) * wb + bx) * 64;
                for (int k = 0; k < 64; k++) dst[k] = rows[0][bx][k];
            }
        }
    }
    *out_w = cinfo.image_width;
    *out_h = cinfo.image_height;
    *out_comps = comps;
    *out_wb = wb;
    *out_hb = hb;
    *out_coefs = coefs;
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return 0;
}

/* Decode to interleaved RGB. float_idct selects JDCT_FLOAT over JDCT_ISLOW. */
int refjpeg_decode_rgb(const unsigned char *data, unsigned long len, int float_idct, int *out_w,
                       int *out_h, unsigned char **out_pixels, char *errbuf, int errlen) {
    struct jpeg_decompress_struct cinfo;
    struct shim_err jerr;
    unsigned char *pixels = NULL;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = shim_error_exit;
    jerr.pub.emit_message = shim_silent;
    if (setjmp(jerr.jump)) {
        snprintf(errbuf, errlen, "%s", jerr.msg);
        jpeg_destroy_decompress(&cinfo);
        free(pixels);
        return -1;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, data, len);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    cinfo.dct_method = float_idct ? JDCT_FLOAT : JDCT_ISLOW;
    cinfo.do_fancy_upsampling = FALSE;
    jpeg_start_decompress(&cinfo);
    size_t stride = (size_t)cinfo.output_width * 3;
    pixels = (unsigned char *)malloc(stride * cinfo.output_height);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = pixels + stride * cinfo.output_scanline;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    *out_w = cinfo.output_width;
    *out_h = cinfo.output_height;
    *out_pixels = pixels;
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return 0;
}

/* Encode interleaved RGB as baseline 4:4:4 JPEG. */
int refjpeg_encode_rgb(const unsigned char *pixels, int w, int h, int quality,
                       int restart_interval, int optimize, int progressive,
                       int subsample, unsigned char **out_data, unsigned long *out_len,
                       char *errbuf, int errlen) {
    struct jpeg_compress_struct cinfo;
    struct shim_err jerr;
    unsigned char *buf = NULL;
    unsigned long size = 0;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = shim_error_exit;
    jerr.pub.emit_message = shim_silent;
    if (setjmp(jerr.jump)) {
        snprintf(errbuf, errlen, "%s", jerr.msg);
        jpeg_destroy_compress(&cinfo);
        return -1;
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buf, &size);
    cinfo.image_width = w;
    cinfo.image_height = h;
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    if (!subsample) {
        for (int c = 0; c < 3; c++) {
            cinfo.comp_info[c].h_samp_factor = 1;
            cinfo.comp_info[c].v_samp_factor = 1;
        }
    }
    cinfo.restart_interval = restart_interval;
    cinfo.optimize_coding = optimize ? TRUE : FALSE;
    if (progressive) jpeg_simple_progression(&cinfo);
    jpeg_start_compress(&cinfo, TRUE);
    size_t stride = (size_t)w * 3;
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = (JSAMPROW)(pixels + stride * cinfo.next_scanline);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
    *out_data = buf;
    *out_len = size;
    return 0;
}

void refjpeg_free(void *p) { free(p); }
